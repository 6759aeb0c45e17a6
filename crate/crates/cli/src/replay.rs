//! `hpred replay-export`: run log and layered-grid file to plain CSV.
//!
//! ```text
//! trajectories.csv   one row per logged state: robot pose, then every human
//! events.csv         time, kind, JSON payload
//! layers.csv         one row per exported grid layer and the file holding it
//! grid.json          grid geometry (width, height, resolution, origin)
//! grids/             stack_RRRR_layer_KK.csv, `height` rows of `width` values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hpred_core::sim::{read_log, Record};
use hpred_core::stack_io::read_stack;
use serde::Serialize;

use crate::{create_dir, write_file, CliError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub states: usize,
    pub events: usize,
    pub stacks: usize,
    pub layers: usize,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct GridInfo {
    width: usize,
    height: usize,
    resolution_m: f64,
    origin_m: [f64; 2],
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?,
    ))
}

pub fn cmd_replay_export(log_path: &Path, stacks_path: Option<&Path>, out_dir: &Path) -> Result<ReplaySummary, CliError> {
    let out_dir = create_dir(out_dir)?;
    let file = File::open(log_path).map_err(CliError::io(format!("opening {}", log_path.display())))?;
    let records = read_log(BufReader::new(file)).map_err(CliError::io(format!("reading {}", log_path.display())))?;

    let traj_path = out_dir.join("trajectories.csv");
    let werr = |p: &Path| CliError::io(format!("writing {}", p.display()));
    let mut traj = csv_writer(&traj_path)?;
    let n_humans = records
        .iter()
        .find_map(|r| match r {
            Record::State { humans, .. } => Some(humans.len()),
            _ => None,
        })
        .unwrap_or(0);
    let mut header = String::from("t,step,robot_x,robot_y,robot_theta,robot_v");
    for i in 0..n_humans {
        header.push_str(&format!(",h{i}_x,h{i}_y,h{i}_goal_x,h{i}_goal_y,h{i}_dwelling"));
    }
    writeln!(traj, "{header}").map_err(werr(&traj_path))?;

    let events_path = out_dir.join("events.csv");
    let mut events = csv_writer(&events_path)?;
    writeln!(events, "t,kind,payload").map_err(werr(&events_path))?;

    let mut n_states = 0;
    let mut n_events = 0;
    // (stack record, prediction index, time of the prediction call)
    let mut stack_times = Vec::new();
    for r in &records {
        match r {
            Record::State { t, step, robot, humans } => {
                let mut line = format!("{t},{step},{},{},{},{}", robot.x, robot.y, robot.theta, robot.v);
                for h in humans {
                    line.push_str(&format!(",{},{},{},{},{}", h.x, h.y, h.goal[0], h.goal[1], u8::from(h.dwelling)));
                }
                writeln!(traj, "{line}").map_err(werr(&traj_path))?;
                n_states += 1;
            }
            Record::Event { t, event } => {
                let payload = serde_json::to_value(event).expect("event serializes");
                let kind = payload["kind"].as_str().unwrap_or("").to_string();
                let payload = serde_json::to_string(&payload).expect("json");
                writeln!(events, "{t},{kind},\"{}\"", payload.replace('"', "\"\"")).map_err(werr(&events_path))?;
                n_events += 1;
            }
            Record::Prediction {
                t,
                index,
                stack_record: Some(s),
                ..
            } => stack_times.push((*s, *index, *t)),
            _ => {}
        }
    }
    traj.flush().map_err(werr(&traj_path))?;
    events.flush().map_err(werr(&events_path))?;

    let mut n_stacks = 0;
    let mut n_layers = 0;
    if let Some(sp) = stacks_path {
        let grids_dir = create_dir(&out_dir.join("grids"))?;
        let layers_path = out_dir.join("layers.csv");
        let mut layers = csv_writer(&layers_path)?;
        writeln!(layers, "stack,prediction,base_time,layer,layer_time,mass,max,file").map_err(werr(&layers_path))?;
        let f = File::open(sp).map_err(CliError::io(format!("opening {}", sp.display())))?;
        let mut input = BufReader::new(f);
        let mut geometry = None;
        while let Some(stack) = read_stack(&mut input).map_err(CliError::io(format!("reading {}", sp.display())))? {
            let record = n_stacks as u64;
            let prediction = stack_times
                .iter()
                .find(|(s, _, _)| *s == record)
                .map_or(String::new(), |(_, i, _)| i.to_string());
            for (k, layer) in stack.layers.iter().enumerate() {
                let name = format!("stack_{record:04}_layer_{k:02}.csv");
                let path = grids_dir.join(&name);
                let mut w = csv_writer(&path)?;
                layer.write_csv(&mut w).map_err(werr(&path))?;
                w.flush().map_err(werr(&path))?;
                writeln!(
                    layers,
                    "{record},{prediction},{},{k},{},{},{},grids/{name}",
                    stack.base_time,
                    stack.base_time + (k + 1) as f64 * stack.dt,
                    layer.mass(),
                    layer.max_value()
                )
                .map_err(werr(&layers_path))?;
                n_layers += 1;
            }
            geometry.get_or_insert(stack.spec);
            n_stacks += 1;
        }
        layers.flush().map_err(werr(&layers_path))?;
        if let Some(s) = geometry {
            let info = GridInfo {
                width: s.width,
                height: s.height,
                resolution_m: s.resolution,
                origin_m: s.origin,
            };
            let mut bytes = serde_json::to_vec_pretty(&info).expect("grid info serializes");
            bytes.push(b'\n');
            write_file(&out_dir.join("grid.json"), &bytes)?;
        }
    }

    Ok(ReplaySummary {
        states: n_states,
        events: n_events,
        stacks: n_stacks,
        layers: n_layers,
        out_dir,
    })
}
