//! Grid sweeps over dotted config keys.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::{execute, Failure, RunArgs};

/// Cartesian product of the grid in key order; an empty grid yields one
/// empty point.
pub fn expand(grid: &serde_json::Map<String, Value>) -> Result<Vec<Vec<(String, String)>>, Failure> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        let list = values
            .as_array()
            .ok_or_else(|| Failure::Config(vec![format!("grid entry `{key}` must be a list")]))?;
        if list.is_empty() {
            return Err(Failure::Config(vec![format!("grid entry `{key}` is empty")]));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                list.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.to_string()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

struct PointResult {
    index: usize,
    params: String,
    outcome: Result<(f64, f64, f64, u64), String>,
}

pub(crate) fn cmd_sweep(args: &RunArgs, grid: Option<&Path>) -> Result<(), Failure> {
    let grid = match grid {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(vec![format!("{}: {e}", p.display())]))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::Config(vec!["grid must be a JSON object".into()])),
                Err(e) => return Err(Failure::Config(vec![format!("{}: {e}", p.display())])),
            }
        }
        None => Default::default(),
    };
    let points = expand(&grid)?;
    let base = args.resolve(&[])?;
    let root = PathBuf::from(&base.exec.out_dir);
    fs::create_dir_all(&root).map_err(|e| Failure::Run(e.to_string()))?;

    let mut results = Vec::new();
    for (index, point) in points.iter().enumerate() {
        let params = point
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let dir = root.join(format!("point_{index:03}"));
        let outcome = match args.resolve(point) {
            Ok(mut cfg) => {
                cfg.exec.out_dir = dir.display().to_string();
                execute(&cfg, &dir)
                    .map(|r| (r.final_acc_mean, r.final_acc_std, r.graph_recovery, r.comm.contacts))
                    .map_err(|e| e.to_string())
            }
            Err(Failure::Config(v)) => Err(v.join("; ")),
            Err(Failure::Run(m)) => Err(m),
        };
        match &outcome {
            Ok((acc, ..)) => println!("point {index} [{params}]: accuracy {acc:.4}"),
            Err(e) => eprintln!("point {index} [{params}] failed: {e}"),
        }
        results.push(PointResult { index, params, outcome });
    }

    // best accuracy first; failures last in grid order
    results.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Ok(x), Ok(y)) => y.0.partial_cmp(&x.0).unwrap_or(Ordering::Equal).then(a.index.cmp(&b.index)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.index.cmp(&b.index),
    });
    let mut csv = String::from("rank,point,status,final_acc_mean,final_acc_std,graph_recovery,contacts,params,error\n");
    for (rank, r) in results.iter().enumerate() {
        let params = r.params.replace('"', "'");
        match &r.outcome {
            Ok((m, s, g, c)) => csv.push_str(&format!("{},{},ok,{m},{s},{g},{c},\"{params}\",\n", rank + 1, r.index)),
            Err(e) => csv.push_str(&format!(
                "{},{},failed,,,,,\"{params}\",\"{}\"\n",
                rank + 1,
                r.index,
                e.replace('"', "'")
            )),
        }
    }
    fs::write(root.join("index.csv"), csv).map_err(|e| Failure::Run(e.to_string()))?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!("{} points, {failed} failed -> {}", results.len(), root.join("index.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn grid_expansion() {
        let g = json!({"cgl.steps": [1, 2, 5], "train.loss.use_cont": [true, false]});
        let pts = expand(g.as_object().unwrap()).ok().unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![("cgl.steps".into(), "1".into()), ("train.loss.use_cont".into(), "true".into())]);
        assert_eq!(expand(&Default::default()).ok().unwrap(), vec![Vec::new()]);
    }
}
