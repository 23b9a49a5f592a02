//! Terminal teleoperation: key presses become relative actions through the
//! configured bindings, one control tick per period.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crossterm::event::{self, Event, KeyCode, KeyEventKind, KeyModifiers};
use crossterm::terminal;
use roboshim::environment::{Recorder, RobotEnv};
use roboshim::input::{InputConfig, KeyboardInput};

use crate::app::{pace, tick, RunError};

/// Browser-style key name for a terminal key, matching the binding table.
pub fn key_name(code: KeyCode) -> Option<String> {
    Some(match code {
        KeyCode::Left => "ArrowLeft".into(),
        KeyCode::Right => "ArrowRight".into(),
        KeyCode::Up => "ArrowUp".into(),
        KeyCode::Down => "ArrowDown".into(),
        KeyCode::PageUp => "PageUp".into(),
        KeyCode::PageDown => "PageDown".into(),
        KeyCode::Home => "Home".into(),
        KeyCode::End => "End".into(),
        KeyCode::Char(c) => c.to_string(),
        _ => return None,
    })
}

struct RawMode;

impl RawMode {
    fn enable() -> Result<Self, RunError> {
        terminal::enable_raw_mode().map_err(|e| RunError::Other(format!("terminal: {e}")))?;
        Ok(Self)
    }
}

impl Drop for RawMode {
    fn drop(&mut self) {
        let _ = terminal::disable_raw_mode();
    }
}

/// Runs until Esc or Ctrl-C. Returns the episodes finished during the session.
pub fn run(mut env: RobotEnv, input_config: InputConfig, mut recorder: Recorder) -> Result<Vec<PathBuf>, RunError> {
    let (mut input, keys) = KeyboardInput::new(input_config)?;
    let period = Duration::from_secs_f64(env.limits().dt);
    env.reset()?;
    let mut finished = Vec::new();
    let mut out = std::io::stdout();
    let _raw = RawMode::enable()?;
    write!(out, "arrows/PgUp/PgDn move, [ ] . , Home End rotate, space gripper, r/s/d recorder, Esc quits\r\n").ok();
    let mut next = Instant::now() + period;
    'outer: loop {
        while event::poll(Duration::ZERO).map_err(|e| RunError::Other(e.to_string()))? {
            if let Event::Key(k) = event::read().map_err(|e| RunError::Other(e.to_string()))? {
                if k.kind == KeyEventKind::Release {
                    continue;
                }
                let ctrl_c = k.code == KeyCode::Char('c') && k.modifiers.contains(KeyModifiers::CONTROL);
                if k.code == KeyCode::Esc || ctrl_c {
                    break 'outer;
                }
                if let Some(name) = key_name(k.code) {
                    keys.press(&name);
                }
            }
        }
        let t = tick(&mut env, &mut input, &mut recorder)?;
        for dir in &t.finished {
            write!(out, "\r\nsaved {}\r\n", dir.display()).ok();
        }
        finished.extend(t.finished);
        let s = env.robot_state();
        let p = s.tcp_pose.position;
        let rec = if recorder.is_open() {
            format!("REC {:>5}", recorder.frame_count())
        } else {
            "         ".into()
        };
        write!(
            out,
            "\rt={:8.2}  pos=({:+.4}, {:+.4}, {:+.4})  grip={:.3}  {rec}",
            s.timestamp, p.x, p.y, p.z, s.gripper_width
        )
        .ok();
        out.flush().ok();
        pace(&mut next, period);
    }
    if recorder.is_open() {
        finished.push(recorder.end_episode()?);
    }
    write!(out, "\r\n").ok();
    Ok(finished)
}
