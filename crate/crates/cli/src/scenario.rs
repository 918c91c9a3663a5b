//! Scenario files: one JSON document describing a single system, its
//! initial state, gauge, integrator settings and outputs. Every parse error
//! carries the dotted JSON path of the offending value.

use std::collections::{BTreeMap, HashMap};

use repinv_core::eom::{Gauge, GaugeChoice, GaugeTarget};
use repinv_core::expr::Expr;
use repinv_core::integrate::{Direction, Event, IntegratorConfig, Method, State};
use repinv_core::lagrangian::{CanonicalTerm, LagrangianSpec};
use repinv_core::tensors::SymTensorField;
use repinv_core::{PhiTerm, PointSource, RadialState, SivConfig, SnRadialSystem};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config error at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

type Parsed<T> = Result<T, ConfigError>;

fn err<T>(path: &str, message: impl Into<String>) -> Parsed<T> {
    Err(ConfigError {
        path: path.into(),
        message: message.into(),
    })
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.into()
    } else {
        format!("{path}.{key}")
    }
}

/// The physical system a scenario integrates.
#[derive(Debug, Clone)]
pub enum System {
    Particle {
        lagrangian: LagrangianSpec,
        gauge: Gauge,
        state0: State,
        span: (f64, f64),
        events: Vec<Event>,
    },
    Radial {
        system: SnRadialSystem,
        state0: RadialState,
        t0: f64,
        span: (f64, f64),
        u_floor: f64,
    },
    Siv {
        sources: Vec<PointSource>,
        g: f64,
        siv: SivConfig,
        state0: State,
        /// Coordinate plane of the angular momentum diagnostic.
        plane: (usize, usize),
    },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: System,
    pub integrator: IntegratorConfig,
    /// Write every `stride`-th sample (the last one always).
    pub stride: usize,
}

impl Scenario {
    pub fn from_value(root: &Value) -> Parsed<Scenario> {
        let obj = object(root, "")?;
        let params = parameters(obj)?;
        let kinds: Vec<&str> = ["lagrangian", "snradial", "fictitious"]
            .into_iter()
            .filter(|k| obj.contains_key(*k))
            .collect();
        let system = match kinds.as_slice() {
            ["lagrangian"] => particle(obj, &params)?,
            ["snradial"] => radial(obj, &params)?,
            ["fictitious"] => siv(obj)?,
            [] => return err("", "expected exactly one of `lagrangian`, `snradial`, `fictitious`"),
            _ => return err("", format!("expected exactly one system kind, found {}", kinds.join(", "))),
        };
        if !matches!(system, System::Particle { .. }) && obj.contains_key("events") {
            return err("events", "events are supported for `lagrangian` scenarios only");
        }
        let integrator = match obj.get("integrator") {
            Some(v) => integrator(v, "integrator")?,
            None => IntegratorConfig::default(),
        };
        let stride = match obj.get("output").map(|o| object(o, "output")).transpose()? {
            Some(o) => match o.get("stride") {
                Some(s) => usize_at(s, "output.stride").and_then(|s| {
                    if s == 0 {
                        err("output.stride", "must be at least 1")
                    } else {
                        Ok(s)
                    }
                })?,
                None => 1,
            },
            None => 1,
        };
        Ok(Scenario {
            system,
            integrator,
            stride,
        })
    }
}

fn object<'a>(v: &'a Value, path: &str) -> Parsed<&'a Map<String, Value>> {
    v.as_object().map_or_else(|| err(path, "expected an object"), Ok)
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Parsed<&'a Value> {
    obj.get(key).map_or_else(|| err(&join(path, key), "missing"), Ok)
}

fn number(v: &Value, path: &str) -> Parsed<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => err(path, "expected a finite number"),
    }
}

fn usize_at(v: &Value, path: &str) -> Parsed<usize> {
    v.as_u64().map_or_else(|| err(path, "expected a non-negative integer"), |u| Ok(u as usize))
}

fn string<'a>(v: &'a Value, path: &str) -> Parsed<&'a str> {
    v.as_str().map_or_else(|| err(path, "expected a string"), Ok)
}

fn numbers(v: &Value, path: &str) -> Parsed<Vec<f64>> {
    let arr = v.as_array().map_or_else(|| err(path, "expected an array of numbers"), Ok)?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

fn pair(v: &Value, path: &str) -> Parsed<(f64, f64)> {
    match numbers(v, path)?.as_slice() {
        [a, b] if b > a => Ok((*a, *b)),
        [_, _] => err(path, "end must exceed start"),
        _ => err(path, "expected [start, end]"),
    }
}

fn parameters(obj: &Map<String, Value>) -> Parsed<HashMap<String, f64>> {
    let Some(p) = obj.get("parameters") else {
        return Ok(HashMap::new());
    };
    object(p, "parameters")?
        .iter()
        .map(|(k, v)| Ok((k.clone(), number(v, &join("parameters", k))?)))
        .collect()
}

/// Parses a DSL string and substitutes parameters; anything left unbound
/// is reported at `path`.
fn expression(v: &Value, path: &str, params: &HashMap<String, f64>) -> Parsed<Expr> {
    let e = match v {
        Value::String(s) => Expr::parse(s).or_else(|e| err(path, e.to_string()))?,
        Value::Number(_) => Expr::num(number(v, path)?),
        _ => return err(path, "expected an expression string or number"),
    };
    if let Some(name) = e.params().into_iter().find(|p| !params.contains_key(p)) {
        return err(path, format!("unbound parameter `{name}`"));
    }
    e.resolve(params).or_else(|e| err(path, e.to_string()))
}

/// `{"rank": 2, "dim": 4, "coeffs": {"0,0": "1", "1,1": "-1"}}`.
fn tensor(v: &Value, path: &str, params: &HashMap<String, f64>) -> Parsed<SymTensorField> {
    let obj = object(v, path)?;
    let rank = usize_at(required(obj, "rank", path)?, &join(path, "rank"))?;
    let dim = usize_at(required(obj, "dim", path)?, &join(path, "dim"))?;
    let mut field = SymTensorField::new(rank, dim).or_else(|e| err(path, e.to_string()))?;
    let cpath = join(path, "coeffs");
    let coeffs = object(required(obj, "coeffs", path)?, &cpath)?;
    for (key, text) in coeffs {
        let at = join(&cpath, key);
        let idx = key
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .or_else(|_| err(&at, "index key must be comma-separated integers"))?;
        field
            .set(&idx, expression(text, &at, params)?)
            .or_else(|e| err(&at, e.to_string()))?;
    }
    Ok(field)
}

fn lagrangian(v: &Value, params: &HashMap<String, f64>) -> Parsed<LagrangianSpec> {
    let path = "lagrangian";
    let obj = object(v, path)?;
    let mut terms = Vec::new();
    if let Some(list) = obj.get("terms") {
        let tpath = join(path, "terms");
        let arr = list.as_array().map_or_else(|| err(&tpath, "expected an array"), Ok)?;
        for (i, t) in arr.iter().enumerate() {
            let at = format!("{tpath}[{i}]");
            let term = object(t, &at)?;
            let coupling = match term.get("coupling") {
                Some(c) => number(c, &join(&at, "coupling"))?,
                None => 1.0,
            };
            let field = tensor(required(term, "field", &at)?, &join(&at, "field"), params)?;
            let rooted = match term.get("form").map(|f| string(f, &join(&at, "form"))).transpose()? {
                None | Some("root") => true,
                Some("polynomial") => false,
                Some(other) => return err(&join(&at, "form"), format!("expected `root` or `polynomial`, got `{other}`")),
            };
            terms.push(if rooted {
                CanonicalTerm::new(coupling, field)
            } else {
                CanonicalTerm::polynomial(coupling, field)
            });
        }
    }
    let custom = match obj.get("custom") {
        None | Some(Value::Null) => None,
        Some(c) => Some(expression(c, &join(path, "custom"), params)?),
    };
    let built = match obj.get("dim") {
        Some(d) => LagrangianSpec::with_dim(usize_at(d, &join(path, "dim"))?, terms, custom),
        None => LagrangianSpec::new(terms, custom),
    };
    built.or_else(|e| err(path, e.to_string()))
}

fn gauge(v: Option<&Value>, params: &HashMap<String, f64>) -> Parsed<Gauge> {
    let path = "gauge";
    let Some(v) = v else { return Ok(Gauge::affine()) };
    let (kind, obj) = match v {
        Value::String(s) => (s.as_str(), None),
        Value::Object(o) => (string(required(o, "kind", path)?, &join(path, "kind"))?, Some(o)),
        _ => return err(path, "expected a gauge name or object"),
    };
    let need = |key: &str| -> Parsed<&Value> {
        match obj {
            Some(o) => required(o, key, path),
            None => err(&join(path, key), "missing"),
        }
    };
    let choice = match kind {
        "affine" => GaugeChoice::Affine,
        "lagrangian" => GaugeChoice::LagrangianConst,
        "coordinate_time" => GaugeChoice::CoordinateTime,
        "metric_norm" => GaugeChoice::MetricNormConst(tensor(need("metric")?, &join(path, "metric"), params)?),
        "residual" => GaugeChoice::ResidualConst {
            charge: number(need("charge")?, &join(path, "charge"))?,
            potential: tensor(need("potential")?, &join(path, "potential"), params)?,
        },
        other => {
            return err(
                &join(path, "kind"),
                format!("unknown gauge `{other}`; expected affine, lagrangian, metric_norm, residual or coordinate_time"),
            )
        }
    };
    let mut g = Gauge::new(choice);
    if let Some(t) = obj.and_then(|o| o.get("target")) {
        let target = match t {
            Value::String(s) if s == "initial" => GaugeTarget::Initial,
            _ => GaugeTarget::Value(number(t, &join(path, "target"))?),
        };
        g = g.with_target(target);
    }
    Ok(g)
}

fn state(v: &Value, path: &str, dim: usize) -> Parsed<State> {
    let obj = object(v, path)?;
    let tau = match obj.get("tau") {
        Some(t) => number(t, &join(path, "tau"))?,
        None => 0.0,
    };
    let x = numbers(required(obj, "x", path)?, &join(path, "x"))?;
    let vel = numbers(required(obj, "v", path)?, &join(path, "v"))?;
    if x.len() != dim {
        return err(&join(path, "x"), format!("expected {dim} components, got {}", x.len()));
    }
    if vel.len() != dim {
        return err(&join(path, "v"), format!("expected {dim} components, got {}", vel.len()));
    }
    Ok(State::new(tau, x, vel))
}

/// Event functions are DSL expressions in `tau`, `x<i>` and `v<i>`.
fn events(v: Option<&Value>, dim: usize, params: &HashMap<String, f64>) -> Parsed<Vec<Event>> {
    let Some(v) = v else { return Ok(Vec::new()) };
    let arr = v.as_array().map_or_else(|| err("events", "expected an array"), Ok)?;
    let mut out = Vec::new();
    for (i, e) in arr.iter().enumerate() {
        let at = format!("events[{i}]");
        let obj = object(e, &at)?;
        let name = string(required(obj, "name", &at)?, &join(&at, "name"))?.to_string();
        let fpath = join(&at, "expr");
        let f = expression(required(obj, "expr", &at)?, &fpath, params)?;
        for var in f.variables() {
            let ok = var == "tau"
                || ["x", "v"].iter().any(|p| {
                    var.strip_prefix(p)
                        .and_then(|i| i.parse::<usize>().ok())
                        .is_some_and(|i| i < dim)
                });
            if !ok {
                return err(&fpath, format!("unknown variable `{var}`"));
            }
        }
        let names: Vec<String> = (0..dim)
            .map(|i| format!("x{i}"))
            .chain((0..dim).map(|i| format!("v{i}")))
            .collect();
        let mut event = Event::new(name, move |tau, y| {
            let mut b: Vec<(&str, f64)> = names.iter().map(String::as_str).zip(y.iter().copied()).collect();
            b.push(("tau", tau));
            f.eval_f64(&b[..]).unwrap_or(f64::NAN)
        });
        if let Some(d) = obj.get("direction") {
            event = event.direction(match string(d, &join(&at, "direction"))? {
                "rising" => Direction::Rising,
                "falling" => Direction::Falling,
                "either" => Direction::Either,
                other => return err(&join(&at, "direction"), format!("unknown direction `{other}`")),
            });
        }
        if obj.get("terminal").and_then(Value::as_bool).unwrap_or(false) {
            event = event.terminal();
        }
        out.push(event);
    }
    Ok(out)
}

fn particle(obj: &Map<String, Value>, params: &HashMap<String, f64>) -> Parsed<System> {
    let lag = lagrangian(&obj["lagrangian"], params)?;
    let dim = repinv_core::lagrangian::Lagrangian::dim(&lag);
    let gauge = gauge(obj.get("gauge"), params)?;
    if matches!(gauge.choice, GaugeChoice::Affine) && first_order(&lag) {
        return err("gauge", "a first-order homogeneous Lagrangian needs a gauge other than affine");
    }
    Ok(System::Particle {
        state0: state(required(obj, "state0", "")?, "state0", dim)?,
        span: pair(required(obj, "span", "")?, "span")?,
        events: events(obj.get("events"), dim, params)?,
        lagrangian: lag,
        gauge,
    })
}

/// True when every term is first order and there is no custom part, so the
/// Hessian is singular everywhere.
fn first_order(lag: &LagrangianSpec) -> bool {
    lag.custom().is_none() && !lag.terms().is_empty() && lag.terms().iter().all(|t| t.order() == 1)
}

fn radial(obj: &Map<String, Value>, params: &HashMap<String, f64>) -> Parsed<System> {
    let path = "snradial";
    let o = object(&obj["snradial"], path)?;
    let n = usize_at(required(o, "n", path)?, &join(path, "n"))?;
    let psi = expression(required(o, "psi", path)?, &join(path, "psi"), params)?;
    let phi = expression(required(o, "phi", path)?, &join(path, "phi"), params)?;
    let mut system = SnRadialSystem::new(n as u32, psi, phi).or_else(|e| err(path, e.to_string()))?;
    if let Some(t) = o.get("phi_term") {
        system = system.with_phi_term(match string(t, &join(path, "phi_term"))? {
            "n_minus_one" => PhiTerm::OverNMinusOne,
            "n" => PhiTerm::OverN,
            other => return err(&join(path, "phi_term"), format!("expected `n_minus_one` or `n`, got `{other}`")),
        });
    }
    let spath = join(path, "state0");
    let s = object(required(o, "state0", path)?, &spath)?;
    let get = |k: &str| number(required(s, k, &spath)?, &join(&spath, k));
    let state0 = RadialState::new(0.0, get("r")?, get("w")?, get("u")?);
    let t0 = match s.get("t") {
        Some(t) => number(t, &join(&spath, "t"))?,
        None => 0.0,
    };
    let u_floor = match o.get("u_floor") {
        Some(u) => number(u, &join(path, "u_floor"))?,
        None => 1e-6,
    };
    Ok(System::Radial {
        system,
        state0,
        t0,
        span: pair(required(o, "span", path)?, &join(path, "span"))?,
        u_floor,
    })
}

fn siv(obj: &Map<String, Value>) -> Parsed<System> {
    let path = "fictitious";
    let o = object(&obj["fictitious"], path)?;
    let sp = join(path, "siv");
    let s = object(required(o, "siv", path)?, &sp)?;
    let t0 = number(required(s, "t0", &sp)?, &join(&sp, "t0"))?;
    let span = match s.get("span") {
        Some(v) => pair(v, &join(&sp, "span"))?,
        None => (t0, 2.0 * t0),
    };
    let siv = SivConfig::new(t0, span).or_else(|e| err(&sp, e.to_string()))?;
    let srcp = join(path, "sources");
    let list = required(o, "sources", path)?
        .as_array()
        .map_or_else(|| err(&srcp, "expected an array"), Ok)?;
    let mut sources = Vec::new();
    for (i, src) in list.iter().enumerate() {
        let at = format!("{srcp}[{i}]");
        let so = object(src, &at)?;
        let mass = number(required(so, "m", &at)?, &join(&at, "m"))?;
        let pos = numbers(required(so, "pos", &at)?, &join(&at, "pos"))?;
        let pos: [f64; 3] = pos.try_into().or_else(|_| err(&join(&at, "pos"), "expected 3 components"))?;
        let vel = match so.get("vel") {
            Some(v) => numbers(v, &join(&at, "vel"))?
                .try_into()
                .or_else(|_| err(&join(&at, "vel"), "expected 3 components"))?,
            None => [0.0; 3],
        };
        sources.push(PointSource {
            mass,
            position: pos,
            velocity: vel,
        });
    }
    let g = match o.get("G") {
        Some(v) => number(v, &join(path, "G"))?,
        None => 1.0,
    };
    // the evolution parameter is the SIV time itself, starting at span.0
    let mut state0 = state(required(o, "state0", path)?, &join(path, "state0"), 4)?;
    state0.tau = span.0;
    let plane = match o.get("plane") {
        Some(p) => {
            let pp = join(path, "plane");
            match p.as_array().map(|a| a.iter().map(Value::as_u64).collect::<Vec<_>>()).as_deref() {
                Some([Some(a), Some(b)]) if a != b && *a < 4 && *b < 4 => (*a as usize, *b as usize),
                _ => return err(&pp, "expected two distinct indices below 4"),
            }
        }
        None => (1, 2),
    };
    Ok(System::Siv {
        sources,
        g,
        siv,
        state0,
        plane,
    })
}

fn integrator(v: &Value, path: &str) -> Parsed<IntegratorConfig> {
    let o = object(v, path)?;
    let mut cfg = IntegratorConfig::default();
    for (key, val) in o {
        let at = join(path, key);
        match key.as_str() {
            "method" => {
                cfg.method = match string(val, &at)? {
                    "rkf45" => Method::Rkf45,
                    "rk4" => Method::Rk4,
                    other => return err(&at, format!("expected `rkf45` or `rk4`, got `{other}`")),
                }
            }
            "h0" => cfg.h0 = positive(val, &at)?,
            "rtol" => cfg.rtol = positive(val, &at)?,
            "atol" => cfg.atol = positive(val, &at)?,
            "h_max" => cfg.h_max = Some(positive(val, &at)?),
            "max_steps" => cfg.max_steps = usize_at(val, &at)?,
            _ => return err(&at, "unknown integrator setting"),
        }
    }
    Ok(cfg)
}

fn positive(v: &Value, path: &str) -> Parsed<f64> {
    let x = number(v, path)?;
    if x > 0.0 {
        Ok(x)
    } else {
        err(path, "must be positive")
    }
}

/// Sets `value` at a dotted path inside `root`, creating objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Parsed<()> {
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = match cur {
            Value::Object(o) => o,
            _ => return err(&keys[..i].join("."), "expected an object"),
        };
        if i + 1 == keys.len() {
            obj.insert((*key).into(), value);
            return Ok(());
        }
        cur = obj.entry(*key).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one key")
}

/// Grid of a sweep: dotted config paths to lists of values, expanded to
/// their Cartesian product in key order.
pub fn sweep_grid(root: &Value) -> Parsed<Vec<BTreeMap<String, Value>>> {
    let sweep = object(required(object(root, "")?, "sweep", "")?, "sweep")?;
    let grid = object(required(sweep, "grid", "sweep")?, "sweep.grid")?;
    if grid.is_empty() {
        return err("sweep.grid", "grid is empty");
    }
    let mut rows = vec![BTreeMap::new()];
    for (key, values) in grid {
        let at = join("sweep.grid", key);
        let list = values.as_array().map_or_else(|| err(&at, "expected an array"), Ok)?;
        if list.is_empty() {
            return err(&at, "grid axis is empty");
        }
        rows = rows
            .into_iter()
            .flat_map(|row| {
                list.iter().map(move |v| {
                    let mut r = row.clone();
                    r.insert(key.clone(), v.clone());
                    r
                })
            })
            .collect();
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn flat() -> Value {
        json!({
            "lagrangian": {"terms": [{"form": "polynomial", "field": {"rank": 2, "dim": 2, "coeffs": {"0,0": "1", "1,1": "-1"}}}]},
            "state0": {"x": [0, 0], "v": [1, 0.2]},
            "span": [0, 1]
        })
    }

    fn path_of(v: &Value) -> String {
        Scenario::from_value(v).unwrap_err().path
    }

    #[test]
    fn flat_particle_parses() {
        let s = Scenario::from_value(&flat()).unwrap();
        assert!(matches!(s.system, System::Particle { span: (0.0, 1.0), .. }));
        assert_eq!(s.stride, 1);
    }

    #[test]
    fn errors_name_the_json_path() {
        let mut v = flat();
        v["lagrangian"]["terms"][0]["field"]["coeffs"]["0,0"] = json!("1 +");
        assert_eq!(path_of(&v), "lagrangian.terms[0].field.coeffs.0,0");

        let mut v = flat();
        v["state0"]["v"] = json!([1]);
        assert_eq!(path_of(&v), "state0.v");

        let radial = json!({"snradial": {"n": 3, "psi": "1 + ", "phi": "1", "state0": {"r": 1, "w": 1, "u": 0.5}, "span": [0, 1]}});
        assert_eq!(path_of(&radial), "snradial.psi");
    }

    #[test]
    fn unbound_parameter_is_a_config_error() {
        let mut v = flat();
        v["lagrangian"]["terms"][0]["field"]["coeffs"]["0,0"] = json!("m");
        let e = Scenario::from_value(&v).unwrap_err();
        assert!(e.message.contains("`m`"), "{e}");
        v["parameters"] = json!({"m": 2.0});
        assert!(Scenario::from_value(&v).is_ok());
    }

    #[test]
    fn exactly_one_system_kind() {
        let mut v = flat();
        v["snradial"] = json!({});
        assert!(Scenario::from_value(&v).unwrap_err().message.contains("exactly one"));
        assert_eq!(path_of(&json!({})), "");
    }

    #[test]
    fn first_order_needs_a_gauge() {
        let mut v = flat();
        v["lagrangian"]["terms"][0]["form"] = json!("root");
        assert_eq!(path_of(&v), "gauge");
        v["gauge"] = json!("lagrangian");
        assert!(Scenario::from_value(&v).is_ok());
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let v = json!({"sweep": {"grid": {"a": [1, 2], "b.c": [3, 4, 5]}}});
        let rows = sweep_grid(&v).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[5]["a"], json!(2));
        assert_eq!(rows[5]["b.c"], json!(5));
        assert_eq!(sweep_grid(&json!({"sweep": {"grid": {}}})).unwrap_err().path, "sweep.grid");
    }

    #[test]
    fn set_path_creates_objects() {
        let mut v = json!({"a": {"b": 1}});
        set_path(&mut v, "a.c.d", json!(2)).unwrap();
        assert_eq!(v, json!({"a": {"b": 1, "c": {"d": 2}}}));
    }
}
