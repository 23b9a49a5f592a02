use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use roboshim::actions::decode;
use roboshim::calibration::{calibrate, HandEyeMode, Pairing, PoseObservation};
use roboshim::environment::{validate_episode, EnvError, PlaybackEnv, Recorder};
use roboshim::input::{ControlSpace, ScriptedInput};
use roboshim_cli::app::{build_env, pace, tick};
use roboshim_cli::config::Config;
use roboshim_cli::{service, teleop};
use serde_json::json;

#[derive(Parser)]
#[command(name = "roboshim", version, about = "Robot environment toolkit with a simulated arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file layered over the defaults.
    #[arg(long, env = "ROBOSHIM_CONFIG", global = true)]
    config: Option<PathBuf>,
    /// `key.path=value` overrides, applied after the config file.
    #[arg(trailing_var_arg = true)]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    EyeInHand,
    EyeToBase,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Consecutive,
    AllPairs,
}

#[derive(Subcommand)]
enum Command {
    /// Drive the arm from the terminal keyboard.
    Teleop {
        #[command(flatten)]
        common: Common,
    },
    /// Start the HTTP/websocket teleop service.
    Serve {
        /// Overrides `service.port`.
        #[arg(long)]
        port: Option<u16>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a JSONL action script through the environment and record one episode.
    Record {
        #[arg(long)]
        script: PathBuf,
        /// Pace steps at the control period instead of running flat out.
        #[arg(long)]
        realtime: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Play an episode back; with --execute, re-run its actions and compare states.
    Replay {
        episode: PathBuf,
        #[arg(long)]
        execute: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Hand-eye calibration from a JSON list of pose observations.
    Calibrate {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, value_enum, default_value = "consecutive")]
        pairing: PairingArg,
        #[command(flatten)]
        common: Common,
    },
    /// Check an episode directory.
    Validate {
        episode: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration.
    Info {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message }));
}

fn load(common: &Common) -> Result<Config, Failure> {
    Config::load(common.config.as_deref(), &common.overrides).map_err(|e| Failure::Config(e.to_string()))
}

fn read_script(path: &Path) -> Result<Vec<roboshim::ActionFrame>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode(l).map_err(|e| runtime(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn cmd_record(config: &Config, script: &Path, realtime: bool) -> Result<(), Failure> {
    let actions = read_script(script)?;
    let mut env = build_env(config).map_err(runtime)?;
    env.reset().map_err(runtime)?;
    let mut recorder = Recorder::new(&config.recorder.root);
    recorder.start_episode(&env.episode_meta()).map_err(runtime)?;
    let mut input = ScriptedInput::new(ControlSpace::Relative);
    input.load(actions);
    let period = Duration::from_secs_f64(config.robot.dt);
    let mut next = Instant::now() + period;
    while input.remaining() > 0 {
        tick(&mut env, &mut input, &mut recorder).map_err(runtime)?;
        if realtime {
            pace(&mut next, period);
        }
    }
    let frames = recorder.frame_count();
    let dir = recorder.end_episode().map_err(runtime)?;
    println!("{}", json!({ "episode": dir, "frames": frames }));
    Ok(())
}

fn cmd_replay(config: &Config, episode: &Path, execute: bool) -> Result<(), Failure> {
    let mut playback = PlaybackEnv::load(episode).map_err(runtime)?;
    if !execute {
        if playback.is_empty() {
            return Ok(());
        }
        let mut obs = playback.reset().map_err(runtime)?;
        let mut index = 0;
        loop {
            let s = obs.robot_state;
            println!(
                "{}",
                json!({
                    "index": index,
                    "t": s.timestamp,
                    "tcp_pos": s.tcp_pose.position.to_array(),
                    "tcp_orn": s.tcp_pose.orientation.to_array(),
                    "gripper": s.gripper_width,
                    "frames": obs.frame_seq(),
                })
            );
            match playback.step(None) {
                Ok(r) => obs = r.obs,
                Err(EnvError::PlaybackFinished) => break,
                Err(e) => return Err(runtime(e)),
            }
            index += 1;
        }
        return Ok(());
    }
    // re-execute on a fresh simulator with the recorded safety settings
    let m = playback.manifest().clone();
    let mut cfg = config.clone();
    cfg.workspace = m.workspace;
    cfg.rel_limits = m.limits;
    cfg.robot.dt = m.dt;
    cfg.cameras.clear();
    let mut env = build_env(&cfg).map_err(runtime)?;
    env.reset().map_err(runtime)?;
    let mut max_pos: f64 = 0.0;
    let mut max_rot: f64 = 0.0;
    for rec in playback.records() {
        let r = env.step(&rec.action).map_err(runtime)?;
        let (d, a) = r.obs.robot_state.tcp_pose.distance_to(&rec.robot_state.tcp_pose);
        max_pos = max_pos.max(d);
        max_rot = max_rot.max(a);
    }
    println!(
        "{}",
        json!({ "frames": playback.len(), "max_position_error": max_pos, "max_rotation_error": max_rot })
    );
    if max_pos > 1e-9 || max_rot > 1e-9 {
        return Err(runtime(format!(
            "re-executed states diverge from the recording by {max_pos} m / {max_rot} rad"
        )));
    }
    Ok(())
}

fn cmd_calibrate(poses: &Path, mode: Mode, pairing: PairingArg) -> Result<(), Failure> {
    let text = fs::read_to_string(poses).map_err(|e| runtime(format!("{}: {e}", poses.display())))?;
    let obs: Vec<PoseObservation> =
        serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", poses.display())))?;
    let mode = match mode {
        Mode::EyeInHand => HandEyeMode::EyeInHand,
        Mode::EyeToBase => HandEyeMode::EyeToBase,
    };
    let pairing = match pairing {
        PairingArg::Consecutive => Pairing::Consecutive,
        PairingArg::AllPairs => Pairing::AllPairs,
    };
    let result = calibrate(&obs, mode, pairing).map_err(runtime)?;
    println!("{}", serde_json::to_string(&result).expect("result serializes"));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Info { common } => {
            print!("{}", load(&common)?.to_toml());
            Ok(())
        }
        Command::Teleop { common } => {
            let config = load(&common)?;
            let env = build_env(&config).map_err(runtime)?;
            let recorder = Recorder::new(&config.recorder.root);
            let saved = teleop::run(env, config.input.clone(), recorder).map_err(runtime)?;
            for dir in saved {
                println!("{}", json!({ "episode": dir }));
            }
            Ok(())
        }
        Command::Serve { port, common } => {
            let config = load(&common)?;
            let port = port.unwrap_or(config.service.port);
            let handle = service::start(&config, port).map_err(runtime)?;
            eprintln!("{}", json!({ "listening": handle.addr().to_string() }));
            handle.wait();
            Ok(())
        }
        Command::Record {
            script,
            realtime,
            common,
        } => cmd_record(&load(&common)?, &script, realtime),
        Command::Replay {
            episode,
            execute,
            common,
        } => cmd_replay(&load(&common)?, &episode, execute),
        Command::Calibrate {
            poses,
            mode,
            pairing,
            common,
        } => {
            load(&common)?;
            cmd_calibrate(&poses, mode, pairing)
        }
        Command::Validate { episode, common } => {
            load(&common)?;
            let summary = validate_episode(&episode).map_err(runtime)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("ROBOSHIM_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            error_line("usage", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message) = match &f {
                Failure::Config(m) => ("config", m),
                Failure::Runtime(m) => ("runtime", m),
            };
            error_line(kind, message);
            ExitCode::from(f.code())
        }
    }
}
