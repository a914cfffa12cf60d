//! `cratedig`: scan a library for DJ tools, re-score, ablate, export and serve.
//!
//! Exit status is 0 on success, 1 when a scan skipped songs or a command
//! failed at run time, and 2 on a usage or configuration error.

mod config;

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use cratedig_core::audio;
use cratedig_core::catalog::{
    ablate_duration, activity_for_song, export_plot_data, export_segments, load_catalog, prediction_diff, rescore,
    save_catalog, scan_library, AblationReport,
};
use cratedig_core::{Catalog, CatalogError, ClassSet};

use config::{default_cache_for, usage, CliConfig, Overrides, UsageError};

#[derive(Parser, Debug)]
#[command(
    name = "cratedig",
    version,
    about = "Find DJ tools (breaks, acapellas, loops) in a music library"
)]
struct Cli {
    /// TOML file with backend, classes, cache_dir, workers, [encoder] and [pipeline] settings.
    #[arg(long, global = true, env = "CRATEDIG_CONFIG")]
    config: Option<PathBuf>,
    /// mock | mock:pitch | mock:constant | precomputed:<dir> | model:<audio.onnx>,<text.onnx>
    #[arg(long, global = true, env = "CRATEDIG_BACKEND")]
    backend: Option<String>,
    /// Class configuration JSON. Defaults to the bundled DJ-tool classes.
    #[arg(long, global = true, env = "CRATEDIG_CLASSES")]
    classes: Option<PathBuf>,
    /// Embedding cache directory. Defaults to `.cratedig-cache` next to the catalog.
    #[arg(long, global = true, env = "CRATEDIG_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "CRATEDIG_WORKERS")]
    workers: Option<usize>,
    /// Emit one JSON object per line instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyse every audio file under a directory and write a catalog.
    Scan {
        root: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Re-classify a catalog's segments against new classes (requires --classes).
    Rescore {
        catalog: PathBuf,
        /// Where to write the result; defaults to overwriting the input.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Target-class probability as the analysed excerpt gets shorter.
    Ablate {
        #[arg(required = true)]
        audio: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "23,18,13,8,3")]
        durations: Vec<f64>,
        #[arg(long)]
        target: String,
    },
    /// Write every segment predicted as one class to WAV files.
    Export {
        catalog: PathBuf,
        #[arg(long = "class")]
        class_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write activity and boundary CSVs for plotting one song.
    PlotData {
        catalog: PathBuf,
        #[arg(long)]
        song: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API over a catalog.
    Serve {
        catalog: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

enum Outcome {
    Clean,
    Skipped,
}

struct Printer {
    json: bool,
}

impl Printer {
    fn emit(&self, event: &str, mut fields: Value, text: impl FnOnce() -> String) {
        let mut out = std::io::stdout().lock();
        if self.json {
            fields["event"] = json!(event);
            let _ = writeln!(out, "{fields}");
        } else {
            let _ = writeln!(out, "{}", text());
        }
        let _ = out.flush();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::from(2),
                _ => {
                    let _ = Cli::command().write_help(&mut std::io::stderr());
                    ExitCode::from(2)
                }
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Skipped) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let cfg = CliConfig::resolve(Overrides {
        config: cli.config,
        backend: cli.backend,
        classes: cli.classes,
        cache_dir: cli.cache_dir,
        workers: cli.workers,
    })?;
    let out = Printer { json: cli.json };
    match cli.command {
        Command::Scan { root, output } => scan(&cfg, &out, &root, &output),
        Command::Rescore { catalog, output } => {
            let output = output.unwrap_or_else(|| catalog.clone());
            rescore_catalog(&cfg, &out, &catalog, &output)
        }
        Command::Ablate {
            audio,
            durations,
            target,
        } => ablate(&cfg, &out, &audio, &durations, &target),
        Command::Export {
            catalog,
            class_id,
            out: dir,
        } => export(&out, &catalog, &class_id, &dir),
        Command::PlotData {
            catalog,
            song,
            out: dir,
        } => plot_data(&cfg, &out, &catalog, &song, &dir),
        Command::Serve { catalog, port, host } => serve(&cfg, &out, &catalog, SocketAddr::new(host, port)),
    }
}

fn open_catalog(path: &Path) -> anyhow::Result<Catalog> {
    if !path.is_file() {
        return Err(usage(format!("catalog {} does not exist", path.display())));
    }
    load_catalog(path).with_context(|| format!("loading {}", path.display()))
}

fn build_classes(cfg: &CliConfig, encoder: &cratedig_core::Encoder) -> anyhow::Result<ClassSet> {
    let config = cfg.class_config()?;
    ClassSet::build_all_errors(&config, encoder).map_err(|errors| {
        let msgs: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
        anyhow::anyhow!("class config: {}", msgs.join("; "))
    })
}

fn scan(cfg: &CliConfig, out: &Printer, root: &Path, output: &Path) -> anyhow::Result<Outcome> {
    if !root.is_dir() {
        return Err(usage(format!("library root {} is not a directory", root.display())));
    }
    let encoder = cfg.encoder(Some(&default_cache_for(output)))?;
    let classes = build_classes(cfg, &encoder)?;
    let catalog = scan_library(root, &cfg.pipeline, &encoder, &classes, cfg.workers)?;
    save_catalog(&catalog, output).with_context(|| format!("writing {}", output.display()))?;

    for song in &catalog.songs {
        out.emit(
            "song",
            json!({ "song_id": song.song_id, "path": song.path, "segments": song.segments.len() }),
            || format!("{}  {}  {} segments", song.song_id, song.path, song.segments.len()),
        );
    }
    for s in &catalog.skipped {
        log::warn!("skipped {}: {}", s.path, s.reason);
        out.emit("skipped", json!({ "path": s.path, "reason": s.reason }), || {
            format!("skipped {}: {}", s.path, s.reason)
        });
    }
    let segments = catalog.segment_count();
    out.emit(
        "done",
        json!({
            "songs": catalog.songs.len(),
            "segments": segments,
            "skipped": catalog.skipped.len(),
            "catalog": output.display().to_string(),
        }),
        || {
            format!(
                "{} songs, {segments} segments, {} skipped; wrote {}",
                catalog.songs.len(),
                catalog.skipped.len(),
                output.display()
            )
        },
    );
    Ok(if catalog.skipped.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Skipped
    })
}

fn rescore_catalog(cfg: &CliConfig, out: &Printer, path: &Path, output: &Path) -> anyhow::Result<Outcome> {
    if cfg.classes.is_none() {
        return Err(usage("rescore needs --classes <file>"));
    }
    let catalog = open_catalog(path)?;
    let encoder = cfg.encoder(Some(&default_cache_for(path)))?;
    let config = cfg.class_config()?;
    let updated = rescore(&catalog, &config, &encoder)?;
    let changed = prediction_diff(&catalog, &updated);
    save_catalog(&updated, output).with_context(|| format!("writing {}", output.display()))?;

    for key in &changed {
        let from = catalog.results.get(key).map(|c| c.predicted.as_str());
        let to = &updated.results[key].predicted;
        out.emit("changed", json!({ "segment": key, "from": from, "to": to }), || {
            format!("{key}  {} -> {to}", from.unwrap_or("-"))
        });
    }
    out.emit(
        "done",
        json!({ "segments": updated.results.len(), "changed": changed.len(), "catalog": output.display().to_string() }),
        || {
            format!(
                "{} of {} segments changed; wrote {}",
                changed.len(),
                updated.results.len(),
                output.display()
            )
        },
    );
    Ok(Outcome::Clean)
}

fn ablate(
    cfg: &CliConfig,
    out: &Printer,
    files: &[PathBuf],
    durations: &[f64],
    target: &str,
) -> anyhow::Result<Outcome> {
    let encoder = cfg.encoder(None)?;
    let classes = build_classes(cfg, &encoder)?;
    if classes.index_of(target).is_none() {
        return Err(usage(format!(
            "unknown target class {target}; known: {}",
            classes.ids().join(", ")
        )));
    }
    let mut rows = Vec::new();
    for path in files {
        if !path.is_file() {
            return Err(usage(format!("audio file {} does not exist", path.display())));
        }
        let buf = audio::decode(path).with_context(|| format!("decoding {}", path.display()))?;
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let row = ablate_duration(&name, &buf, durations, &classes, target, &encoder).map_err(|e| match e {
            CatalogError::InvalidDurations => usage("durations must be positive and strictly decreasing"),
            other => other.into(),
        })?;
        rows.push(row);
    }
    let report = AblationReport {
        target_class: target.to_string(),
        durations: durations.to_vec(),
        rows,
    };
    if out.json {
        for row in &report.rows {
            out.emit("row", serde_json::to_value(row)?, String::new);
        }
        out.emit(
            "done",
            json!({ "target_class": target, "durations": durations }),
            String::new,
        );
    } else {
        print!("{}", report.render_table());
    }
    Ok(Outcome::Clean)
}

fn export(out: &Printer, path: &Path, class_id: &str, dir: &Path) -> anyhow::Result<Outcome> {
    let catalog = open_catalog(path)?;
    let files = export_segments(&catalog, class_id, dir).map_err(|e| match e {
        CatalogError::UnknownClass(c) => usage(format!("unknown class {c}")),
        other => other.into(),
    })?;
    for f in &files {
        out.emit("file", json!({ "path": f.display().to_string() }), || {
            f.display().to_string()
        });
    }
    out.emit("done", json!({ "class": class_id, "files": files.len() }), || {
        format!("exported {} segments of class {class_id}", files.len())
    });
    Ok(Outcome::Clean)
}

fn plot_data(cfg: &CliConfig, out: &Printer, path: &Path, song_id: &str, dir: &Path) -> anyhow::Result<Outcome> {
    let catalog = open_catalog(path)?;
    let song = catalog
        .song(song_id)
        .ok_or_else(|| usage(format!("song {song_id} is not in {}", path.display())))?;
    let audio_path = Path::new(&song.path);
    let buf = audio::decode(audio_path).with_context(|| format!("decoding {}", song.path))?;
    let activity = activity_for_song(audio_path, &buf, &cfg.pipeline)?;
    let timeline = activity.plot_timeline(song.duration, &cfg.pipeline.features);
    let (act, bnd) = export_plot_data(song, timeline.as_ref(), dir)?;
    out.emit(
        "done",
        json!({ "activity": act.display().to_string(), "boundaries": bnd.display().to_string() }),
        || format!("wrote {} and {}", act.display(), bnd.display()),
    );
    Ok(Outcome::Clean)
}

fn serve(cfg: &CliConfig, out: &Printer, path: &Path, addr: SocketAddr) -> anyhow::Result<Outcome> {
    let catalog = open_catalog(path)?;
    let encoder = cfg.encoder(Some(&default_cache_for(path)))?;
    let state = cratedig_service::AppState::new(catalog, Arc::new(encoder), cfg.pipeline.clone());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        out.emit("listening", json!({ "address": format!("http://{local}") }), || {
            format!("listening on http://{local}")
        });
        cratedig_service::serve(state, listener).await?;
        Ok(Outcome::Clean)
    })
}
