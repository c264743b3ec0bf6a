//! CSV, JSON and gnuplot artifacts. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::control::EventLog;
use crate::error::Result;
use crate::model::StackedSystem;
use crate::scalar::Scalar;
use crate::simulator::{EnsembleStats, Trajectory};

fn num<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.to_f64_lossy())
}

/// `t,y_1..y_dim,norm_sq`.
pub fn trajectory_csv<T: Scalar>(traj: &Trajectory<T>) -> String {
    let mut s = String::from("t");
    for i in 1..=traj.dim {
        let _ = write!(s, ",y_{i}");
    }
    s.push_str(",norm_sq\n");
    for k in 0..traj.len() {
        s.push_str(&num(traj.times[k]));
        for &v in traj.state(k) {
            s.push(',');
            s.push_str(&num(v));
        }
        s.push(',');
        s.push_str(&num(traj.norm_sq[k]));
        s.push('\n');
    }
    s
}

/// `t`, then `z{i}_{c}` for every agent component, then `tau_{i}`.
pub fn agents_csv<T: Scalar>(traj: &Trajectory<T>, sys: &StackedSystem<T>) -> String {
    let mut s = String::from("t");
    for (i, a) in sys.agents.iter().enumerate() {
        for c in 1..=a.n {
            let _ = write!(s, ",z{}_{c}", i + 1);
        }
    }
    for i in 1..=sys.n_agents {
        let _ = write!(s, ",tau_{i}");
    }
    s.push('\n');
    let energy = traj.energy_trace(sys);
    for (k, taus) in energy.iter().enumerate() {
        s.push_str(&num(traj.times[k]));
        for z in traj.z_at(sys, k) {
            for v in z {
                s.push(',');
                s.push_str(&num(v));
            }
        }
        for &tau in taus {
            s.push(',');
            s.push_str(&num(tau));
        }
        s.push('\n');
    }
    s
}

/// `s,t_s,gap,w_ratio`.
pub fn events_csv<T: Scalar>(log: &EventLog<T>) -> String {
    let mut s = String::from("s,t_s,gap,w_ratio\n");
    for e in &log.events {
        let _ = writeln!(s, "{},{},{},{}", e.index, num(e.t), num(e.gap), num(e.w_ratio));
    }
    s
}

/// `t,mean_sq,envelope` with `envelope = M e^{−γt} mean_sq(0)`.
pub fn ensemble_csv<T: Scalar>(stats: &EnsembleStats<T>, gamma: T, m: T) -> String {
    let mut s = String::from("t,mean_sq,envelope\n");
    let e0 = stats.mean_sq.first().copied().unwrap_or(T::zero());
    for (&t, &v) in stats.times.iter().zip(&stats.mean_sq) {
        let env = m * (-gamma * t).exp() * e0;
        let _ = writeln!(s, "{},{},{}", num(t), num(v), num(env));
    }
    s
}

pub fn json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| crate::error::PeticError::Invariant(e.to_string()))
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

pub fn gnuplot_trajectory(dim: usize) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key off\nset xlabel 't'\nset ylabel 'y(t)'\nset terminal pngcairo size 900,500\nset output 'trajectory.png'\nplot ",
    );
    let cols: Vec<String> = (0..dim)
        .map(|i| format!("'trajectory.csv' using 1:{} with lines", i + 2))
        .collect();
    s.push_str(&cols.join(", \\\n     "));
    s.push('\n');
    s
}

pub fn gnuplot_events() -> String {
    "set datafile separator ','\nset key off\nset xlabel 't_s'\nset ylabel 't_s - t_{s-1}'\n\
     set terminal pngcairo size 900,500\nset output 'events.png'\n\
     plot 'events.csv' using 2:3 with impulses, '' using 2:3 with points pt 7\n"
        .to_string()
}

pub fn gnuplot_ensemble() -> String {
    "set datafile separator ','\nset logscale y\nset xlabel 't'\nset ylabel 'E|y(t)|^2'\n\
     set terminal pngcairo size 900,500\nset output 'ensemble.png'\n\
     plot 'ensemble.csv' using 1:2 with lines title 'mean square', '' using 1:3 with lines dt 2 title 'M e^{-gamma t} E|y(0)|^2'\n"
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::EventLog;

    #[test]
    fn csv_headers_and_precision() {
        let mut log = EventLog::<f64>::default();
        log.push(3, 0.003, 3, 1.5);
        let s = events_csv(&log);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("s,t_s,gap,w_ratio"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1].parse::<f64>().unwrap(), 3.0 * 0.003);
        assert_eq!(row[3], "1.5000000000000000e0");
        assert_eq!(events_csv(&EventLog::<f64>::default()), "s,t_s,gap,w_ratio\n");
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1f64, 1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
