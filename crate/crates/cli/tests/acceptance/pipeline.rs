//! Checks that drive the `webrpg` binary end to end.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use crate::{ensure, s, Outcome};

/// Run the binary with `args`; stdout on success.
fn webrpg(cache: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_webrpg"))
        .args(args)
        .env("WEBRPG_CACHE", cache)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(s)?;
    if !out.status.success() {
        return Err(format!("webrpg {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    String::from_utf8(out.stdout).map_err(s)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

pub fn metric_identity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(s)?;
    let ds = tmp.path().join("ds");
    webrpg(tmp.path(), &["synth", "--out", p(&ds), "--count", "100", "--seed", "1"])?;
    let start = Instant::now();
    let text = webrpg(tmp.path(), &["eval", "--real", p(&ds), "--gen", p(&ds), "--metrics", "iou,sc"])?;
    let took = start.elapsed().as_secs_f64();
    let report: serde_json::Value = serde_json::from_str(&text).map_err(s)?;
    let pages = report["pages"].as_u64().unwrap_or(0);
    let iou = report["ele_iou"].as_f64().ok_or("no ele_iou in report")?;
    let sc = report["sc_score"].as_f64().ok_or("no sc_score in report")?;
    ensure(pages == 100, || format!("{pages} pages scored"))?;
    ensure(iou == 1.0 && sc == 1.0, || format!("Ele. IoU {iou}, SC {sc}"))?;
    ensure(took < 10.0, || format!("eval took {took:.1}s"))?;
    Ok(format!("100 pages vs themselves: Ele. IoU {iou:.4}, SC Score {sc:.4}, eval {took:.2}s (< 10s)"))
}

/// synth -> train-vae -> train-ar -> generate -> eval in `dir`; returns
/// the report bytes and the AR checkpoint bytes.
fn end_to_end(dir: &Path, seed: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let ds = dir.join("ds");
    let (vae, ar, gen, report) = (dir.join("vae.ckpt"), dir.join("ar.ckpt"), dir.join("gen"), dir.join("report.json"));
    webrpg(
        dir,
        &["synth", "--out", p(&ds), "--count", "10", "--min-elements", "32", "--max-elements", "40", "--seed", seed],
    )?;
    let small = ["--d", "32", "--batch", "4", "--seed", seed];
    webrpg(dir, &[&["train-vae", "--data", p(&ds), "--out", p(&vae), "--steps", "40"], &small[..]].concat())?;
    webrpg(
        dir,
        &[&["train-ar", "--data", p(&ds), "--out", p(&ar), "--vae", p(&vae), "--steps", "20"], &small[..]].concat(),
    )?;
    webrpg(
        dir,
        &["generate", "--model", "ar", "--checkpoint", p(&ar), "--data", p(&ds), "--split", "all", "--out-dir", p(&gen)],
    )?;
    webrpg(
        dir,
        &["eval", "--real", p(&ds), "--gen", p(&gen), "--metrics", "iou,sc", "--out", p(&report)],
    )?;
    Ok((std::fs::read(&report).map_err(s)?, std::fs::read(&ar).map_err(s)?))
}

pub fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(s)?, tempfile::tempdir().map_err(s)?);
    let (report_a, ckpt_a) = end_to_end(a.path(), "5")?;
    let (report_b, ckpt_b) = end_to_end(b.path(), "5")?;
    ensure(report_a == report_b, || "reports differ between runs".into())?;
    ensure(ckpt_a == ckpt_b, || "AR checkpoints differ between runs".into())?;
    let report: serde_json::Value = serde_json::from_slice(&report_a).map_err(s)?;
    Ok(format!(
        "two seeded runs wrote byte-identical reports ({} bytes, Ele. IoU {:.4}) and checkpoints",
        report_a.len(),
        report["ele_iou"].as_f64().unwrap_or(f64::NAN)
    ))
}
