//! Executes scenarios and renders their CSV output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use repinv_core::eom::Gauge;
use repinv_core::fictitious::{drift_rates, integrate_siv, SuperposedField};
use repinv_core::integrate::{diagnostics, integrate, Diagnostics, IntegrationFailure, State, Trajectory};
use repinv_core::lagrangian::Lagrangian;
use repinv_core::oracle::{self, Comparison, Fixture, FixtureLagrangian};
use repinv_core::snradial::{blowup_exponent, linear_fit, log_spaced_states};
use repinv_core::Error;
use serde_json::Value;

use crate::scenario::{Scenario, System};

/// A trajectory table, possibly cut short by `failure`.
#[derive(Debug)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub failure: Option<Error>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_row(row));
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn csv_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v:.16e}").expect("writing to a String");
    }
    s
}

pub fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["tau".to_string(), "t".to_string()];
    h.extend((1..dim).map(|i| format!("x{i}")));
    h.extend((0..dim).map(|i| format!("v{i}")));
    h.extend(["L".to_string(), "h".to_string()]);
    h.extend((0..dim).map(|i| format!("p{i}")));
    h.push("gauge_residual".into());
    h
}

fn row(s: &State, d: &Diagnostics) -> Vec<f64> {
    let mut r = vec![s.tau];
    r.extend(&s.x);
    r.extend(&s.v);
    r.extend([d.lagrangian, d.hamiltonian]);
    r.extend(&d.momentum);
    r.push(d.gauge_residual);
    r
}

fn keep(k: usize, n: usize, stride: usize) -> bool {
    k.is_multiple_of(stride) || k + 1 == n
}

/// Rows of a trajectory. Missing diagnostics (on a failed run) are
/// recomputed; the table stops at the first sample where that fails.
fn rows_of<L: Lagrangian>(traj: &Trajectory, lag: &L, gauge: &Gauge, stride: usize) -> Vec<Vec<f64>> {
    let n = traj.len();
    let mut out = Vec::new();
    for k in 0..n {
        if !keep(k, n, stride) {
            continue;
        }
        let s = traj.state(k);
        let d = match traj.diagnostics.get(k) {
            Some(d) => d.clone(),
            None => match diagnostics(lag, gauge, &s) {
                Ok(d) => d,
                Err(_) => break,
            },
        };
        out.push(row(&s, &d));
    }
    out
}

/// Integration result of any scenario kind, before rendering.
pub struct Outcome {
    pub table: Table,
    pub extras: Extras,
}

/// Kind-specific summary numbers used by `sweep`.
#[derive(Debug, Default, Clone)]
pub struct Extras {
    pub slope: Option<f64>,
    /// Parameter value at which the drift rates below were measured.
    pub drift_t: Option<f64>,
    pub hdot_over_h: Option<f64>,
    pub jdot_over_j: Option<f64>,
    pub h_log_slope: Option<f64>,
    pub j_log_slope: Option<f64>,
}

fn split<T>(r: Result<T, IntegrationFailure<T>>) -> (T, Option<Error>) {
    match r {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    }
}

pub fn simulate(sc: &Scenario) -> Outcome {
    match &sc.system {
        System::Particle {
            lagrangian,
            gauge,
            state0,
            span,
            events,
        } => {
            let (traj, failure) = split(integrate(lagrangian, gauge, state0, *span, &sc.integrator, events));
            // the integrator resolves an `Initial` target internally; redo it
            // here so recomputed diagnostics match
            let gauge = gauge.resolved(lagrangian, state0.tau, &state0.x, &state0.v).unwrap_or_else(|_| gauge.clone());
            let rows = rows_of(&traj, lagrangian, &gauge, sc.stride);
            Outcome {
                table: Table {
                    header: header(lagrangian.dim()),
                    rows,
                    failure,
                },
                extras: Extras::default(),
            }
        }
        System::Radial {
            system,
            state0,
            t0,
            span,
            u_floor,
        } => {
            let (sol, failure) = split(system.integrate(state0, *t0, *span, &sc.integrator, *u_floor));
            let lag = system.lagrangian();
            let affine = Gauge::affine();
            let n = sol.len();
            let mut rows = Vec::new();
            for k in (0..n).filter(|&k| keep(k, n, sc.stride)) {
                let y = &sol.y[k];
                let s = State::new(sol.tau[k], vec![y[0], y[1]], vec![y[2], y[3]]);
                let Ok(d) = diagnostics(&lag, &affine, &s) else { break };
                rows.push(row(&s, &d));
            }
            let extras = Extras {
                slope: blowup_exponent(system, &log_spaced_states(state0.r, state0.w, 1e-4, 1e-1, 16))
                    .ok()
                    .map(|(s, _)| s),
                ..Extras::default()
            };
            Outcome {
                table: Table {
                    header: header(2),
                    rows,
                    failure,
                },
                extras,
            }
        }
        System::Siv {
            sources,
            g,
            siv,
            state0,
            plane,
        } => {
            let field = match SuperposedField::new(sources.clone(), *g) {
                Ok(f) => f,
                Err(e) => {
                    return Outcome {
                        table: Table {
                            header: header(4),
                            rows: Vec::new(),
                            failure: Some(e),
                        },
                        extras: Extras::default(),
                    }
                }
            };
            let (traj, mut failure) = split(integrate_siv(&field, siv, state0, &sc.integrator));
            let rows = rows_of(&traj, &field, &Gauge::affine(), sc.stride);
            let mut extras = Extras::default();
            if failure.is_none() {
                match siv_extras(&traj, *plane) {
                    Ok(e) => extras = e,
                    Err(e) => failure = Some(e),
                }
            }
            Outcome {
                table: Table {
                    header: header(4),
                    rows,
                    failure,
                },
                extras,
            }
        }
    }
}

fn siv_extras(traj: &Trajectory, plane: (usize, usize)) -> Result<Extras, Error> {
    let drift = drift_rates(traj, plane)?;
    let last = drift.t.len().checked_sub(1).ok_or_else(|| Error::Indeterminate("no drift samples".into()))?;
    let fit = |vals: Vec<f64>| -> f64 {
        let pts: Vec<(f64, f64)> = (0..traj.len())
            .map(|k| (traj.ode.tau[k].ln(), vals[k].abs().ln()))
            .collect();
        linear_fit(&pts).0
    };
    let h: Vec<f64> = traj.diagnostics.iter().map(|d| d.hamiltonian).collect();
    let j: Vec<f64> = (0..traj.len())
        .map(|k| repinv_core::fictitious::angular_momentum(&traj.ode.y[k][..4], &traj.diagnostics[k].momentum, plane))
        .collect();
    Ok(Extras {
        slope: None,
        drift_t: Some(drift.t[last]),
        hdot_over_h: Some(drift.hdot_over_h[last]),
        jdot_over_j: Some(drift.jdot_over_j[last]),
        h_log_slope: Some(fit(h)),
        j_log_slope: Some(fit(j)),
    })
}

/// Columns of the sweep table after the grid keys.
pub const SWEEP_COLUMNS: &[&str] = &[
    "status",
    "tau_end",
    "t_end",
    "L_end",
    "h_end",
    "gauge_residual_end",
    "L_drift",
    "slope",
    "drift_t",
    "hdot_over_h",
    "jdot_over_j",
    "h_log_slope",
    "j_log_slope",
    "message",
];

/// One sweep row, already rendered as CSV cells.
pub fn sweep_row(base: &Value, assignment: &BTreeMap<String, Value>) -> (bool, Vec<String>) {
    let mut cells: Vec<String> = assignment.values().map(|v| v.to_string().replace(',', ";")).collect();
    let mut config = base.clone();
    if let Some(o) = config.as_object_mut() {
        o.remove("sweep");
    }
    let scenario = assignment
        .iter()
        .try_for_each(|(k, v)| crate::scenario::set_path(&mut config, k, v.clone()))
        .and_then(|_| Scenario::from_value(&config));
    let sc = match scenario {
        Ok(sc) => sc,
        Err(e) => {
            cells.push("config_error".into());
            cells.extend(std::iter::repeat_n(String::new(), SWEEP_COLUMNS.len() - 2));
            cells.push(quote(&e.to_string()));
            return (false, cells);
        }
    };
    let out = simulate(&sc);
    let ok = out.table.failure.is_none();
    cells.push(if ok { "ok" } else { "runtime_error" }.into());
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.16e}"));
    let last = out.table.rows.last();
    let col = |name: &str| -> Option<f64> {
        let i = out.table.header.iter().position(|h| h == name)?;
        last.map(|r| r[i])
    };
    let l_index = out.table.header.iter().position(|h| h == "L").expect("L column");
    let l_drift = match (out.table.rows.first(), last) {
        (Some(a), Some(b)) if a[l_index] != 0.0 => Some(((b[l_index] - a[l_index]) / a[l_index]).abs()),
        _ => None,
    };
    cells.extend([
        opt(col("tau")),
        opt(col("t")),
        opt(col("L")),
        opt(col("h")),
        opt(col("gauge_residual")),
        opt(l_drift),
        opt(out.extras.slope),
        opt(out.extras.drift_t),
        opt(out.extras.hdot_over_h),
        opt(out.extras.jdot_over_j),
        opt(out.extras.h_log_slope),
        opt(out.extras.j_log_slope),
        quote(&out.table.failure.map_or(String::new(), |e| e.to_string())),
    ]);
    (ok, cells)
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// The built-in oracle fixtures, or one built from a particle scenario:
/// its integrated endpoint becomes the far boundary.
pub fn oracle_fixtures(sc: Option<&Scenario>) -> Result<Vec<Fixture>, Error> {
    let Some(sc) = sc else { return Ok(oracle::fixtures()) };
    let System::Particle {
        lagrangian,
        gauge,
        state0,
        span,
        ..
    } = &sc.system
    else {
        return Err(Error::InvalidArgument("oracle scenarios must be `lagrangian` systems".into()));
    };
    let traj = integrate(lagrangian, gauge, state0, *span, &sc.integrator, &[]).map_err(|f| f.error)?;
    let end = traj.last().ok_or_else(|| Error::Indeterminate("empty trajectory".into()))?;
    Ok(vec![Fixture {
        name: "scenario".into(),
        lagrangian: FixtureLagrangian::Spec(lagrangian.clone()),
        gauge: gauge.choice.clone(),
        a: state0.x.clone(),
        b: end.x,
        span: *span,
    }])
}

pub const ORACLE_HEADER: &str = "fixture,nodes,distance,minimized_action,trajectory_action,shooting_miss,converged";

pub fn oracle_row(c: &Comparison) -> String {
    format!(
        "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
        c.name, c.nodes, c.distance, c.minimized_action, c.trajectory_action, c.shooting_miss, c.converged
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use repinv_core::RadialState;

    #[test]
    fn header_layout() {
        assert_eq!(
            header(2).join(","),
            "tau,t,x1,v0,v1,L,h,p0,p1,gauge_residual"
        );
    }

    #[test]
    fn csv_round_trips_floats() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE];
        let line = csv_row(&vals);
        let back: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(back, vals);
    }

    #[test]
    fn radial_rows_carry_the_sn_value() {
        let sys = repinv_core::SnRadialSystem::parse(3, "1 + 0.1*r", "1", &Default::default()).unwrap();
        let s = RadialState::new(0.0, 1.0, 1.0, 0.5);
        let st = State::new(0.0, vec![0.0, s.r], vec![s.w, s.u]);
        let r = row(&st, &diagnostics(&sys.lagrangian(), &Gauge::affine(), &st).unwrap());
        assert!((r[5] - sys.value(&s).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn quoting() {
        assert_eq!(quote("a,b"), "\"a,b\"");
        assert_eq!(quote("plain"), "plain");
    }
}
