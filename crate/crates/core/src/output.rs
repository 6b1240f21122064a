//! Run artifacts: metrics stream, summary, mixing-matrix dumps and the 2-D
//! latent embedding.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::{principal_2d, RunResult, METRICS_HEADER};
use crate::network::NetworkState;
use crate::numkernels::Mat;

pub fn write_metrics<W: Write>(rows: &[crate::metrics::MetricRow], mut w: W) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Square matrix as CSV, no header.
pub fn write_matrix<W: Write>(m: &Mat, mut w: W) -> Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn summary_json(cfg: &RunConfig, res: &RunResult) -> Value {
    let weights: Vec<&[f64]> = res.final_weights.row_iter().collect();
    json!({
        "method": cfg.method.name(),
        "seed": res.seed,
        "rounds": cfg.rounds,
        "clients": cfg.scenario.clients,
        "final_acc_mean": res.final_acc_mean,
        "final_acc_std": res.final_acc_std,
        "final_accuracy": res.final_accuracy,
        "graph_recovery": res.graph_recovery,
        "contacts": res.comm.contacts,
        "comm": res.comm,
        "clusters": res.clusters,
        "final_weights": weights,
        "config": cfg.echo(),
    })
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, res: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_metrics(&res.rows, &mut buf)?;
    fs::write(dir.join("metrics.csv"), buf)?;

    let mut s = serde_json::to_string_pretty(&summary_json(cfg, res))?;
    s.push('\n');
    fs::write(dir.join("summary.json"), s)?;

    let mut buf = Vec::new();
    write_matrix(&res.final_weights, &mut buf)?;
    fs::write(dir.join("weights_final.csv"), buf)?;

    for (t, w) in &res.weight_snapshots {
        let mut buf = Vec::new();
        write_matrix(w, &mut buf)?;
        fs::write(dir.join(format!("weights_round_{t}.csv")), buf)?;
    }
    Ok(())
}

/// Test-set latents of every client projected onto their two principal
/// directions, as `client,label,cluster,pc1,pc2` rows.
pub fn embedding_csv(st: &NetworkState) -> Result<String> {
    let mut meta = Vec::new();
    let mut latents = Vec::new();
    for (i, (c, d)) in st.clients.iter().zip(&st.data.clients).enumerate() {
        for (x, y) in &d.test {
            latents.push(c.model.forward_features(x)?.latent);
            meta.push((i, *y));
        }
    }
    let mut out = String::from("client,label,cluster,pc1,pc2\n");
    if latents.is_empty() {
        return Ok(out);
    }
    let pts = principal_2d(&Mat::from_rows(&latents)?);
    for (k, (i, y)) in meta.iter().enumerate() {
        out.push_str(&format!(
            "{i},{y},{},{},{}\n",
            st.data.clusters[*i],
            pts[(k, 0)],
            pts[(k, 1)]
        ));
    }
    Ok(out)
}
