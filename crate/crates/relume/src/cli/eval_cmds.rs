//! Policy evaluation: baselines, the learned policy and the a-posteriori
//! search over a shared hallucinator, with CSV traces and an aggregate
//! report whose numbers are recomputable from the traces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frame_select::{
    a_posteriori_best, run_policy_on_episode, ActionPolicy, BaselineKind, BaselinePolicy,
    EpisodeTrace, SearchWindow,
};
use crate::halluc::{HallucNet, Hallucinator, OracleHallucinator};
use crate::nn::load_checkpoint;
use crate::policy::{LearnedPolicy, PolicyNet};

pub struct EvalOptions {
    pub episodes_dir: PathBuf,
    pub policy_checkpoint: Option<PathBuf>,
    pub halluc_checkpoint: Option<PathBuf>,
}

/// Builds the configured hallucinator; `network` mode requires a
/// checkpoint.
pub(crate) fn build_hallucinator(
    config: &RunConfig,
    halluc_checkpoint: Option<&Path>,
) -> Result<Rc<dyn Hallucinator>> {
    match config.s("eval.hallucinator") {
        "network" => {
            let path = halluc_checkpoint.ok_or_else(|| {
                Error::invalid(
                    "eval.hallucinator = network requires --halluc-checkpoint",
                )
            })?;
            let records = load_checkpoint(path)?;
            let mut net = HallucNet::new(config.halluc_config()?, config.u("seed"))?;
            net.load_records(&records)?;
            Ok(Rc::new(net))
        }
        _ => Ok(Rc::new(OracleHallucinator {
            saturation_eps: config.f("clip.saturation_eps") as f32,
        })),
    }
}

fn trace_csv(trace: &EpisodeTrace) -> String {
    let mut out = String::from("t,action,reference_age,mask_area,mse,reward\n");
    for row in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.t, row.action as u8, row.reference_age, row.mask_area, row.mse, row.reward
        );
    }
    out
}

/// Mean and standard error over per-episode mean MSEs.
fn aggregate(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn cmd_eval_policies(config: &RunConfig, out: &Path, options: &EvalOptions) -> Result<()> {
    let gamma = config.f("png.gamma") as f32;
    let episodes = super::episodes::load_episodes(&options.episodes_dir, gamma)?;
    let halluc = build_hallucinator(config, options.halluc_checkpoint.as_deref())?;
    let seed = config.u("seed");

    let traces_dir = out.join("traces");
    std::fs::create_dir_all(&traces_dir)?;

    let mut policies: Vec<Box<dyn ActionPolicy>> = vec![
        Box::new(BaselinePolicy::new(BaselineKind::NoReference, seed)),
        Box::new(BaselinePolicy::new(BaselineKind::NoPush, seed)),
        Box::new(BaselinePolicy::new(BaselineKind::EveryK(config.usize("eval.every_k")), seed)),
        Box::new(BaselinePolicy::new(
            BaselineKind::RandomPush(config.f("eval.random_p")),
            seed,
        )),
        Box::new(BaselinePolicy::new(BaselineKind::AlwaysPush, seed)),
    ];
    if let Some(path) = &options.policy_checkpoint {
        let records = load_checkpoint(path)?;
        let mut net = PolicyNet::new(config.policy_config(), seed)?;
        net.load_records(&records)?;
        policies.push(Box::new(LearnedPolicy::new(net)));
    }

    let mut report_rows: Vec<(String, usize, f64, f64)> = Vec::new();
    for policy in policies.iter_mut() {
        let name = policy.name();
        let mut means = Vec::with_capacity(episodes.len());
        for (i, episode) in episodes.iter().enumerate() {
            let trace =
                run_policy_on_episode(episode.clone(), halluc.clone(), policy.as_mut())?;
            std::fs::write(traces_dir.join(format!("{name}_ep{i:04}.csv")), trace_csv(&trace))?;
            means.push(trace.mean_mse);
        }
        let (mean, stderr) = aggregate(&means);
        println!("{name:>16}: mse {mean:.6} +- {stderr:.6}");
        report_rows.push((name, episodes.len(), mean, stderr));
    }

    // Offline exhaustive search, the non-causal lower bound.
    let window = match config.usize("eval.apost_window") {
        0 => SearchWindow::FullPast,
        k => SearchWindow::Recent(k),
    };
    let mut means = Vec::with_capacity(episodes.len());
    for (i, episode) in episodes.iter().enumerate() {
        let result = a_posteriori_best(episode, halluc.as_ref(), window)?;
        let mut csv = String::from("t,best_reference,mse\n");
        for ((t, (r, m)), _) in (3..episode.len()).zip(&result.per_frame).zip(0..) {
            let _ = writeln!(csv, "{t},{r},{m}");
        }
        std::fs::write(traces_dir.join(format!("a-posteriori_ep{i:04}.csv")), csv)?;
        means.push(result.mean_mse);
    }
    let (mean, stderr) = aggregate(&means);
    println!("{:>16}: mse {mean:.6} +- {stderr:.6}", "a-posteriori");
    report_rows.push(("a-posteriori".into(), episodes.len(), mean, stderr));

    std::fs::write(out.join("report.csv"), render_report(&report_rows))?;
    Ok(())
}

fn render_report(rows: &[(String, usize, f64, f64)]) -> String {
    let mut out = String::from("policy,episodes,mean_mse,stderr_mse\n");
    for (name, n, mean, stderr) in rows {
        let _ = writeln!(out, "{name},{n},{mean},{stderr}");
    }
    out
}

/// Rebuilds the aggregate report from exported traces.
pub fn cmd_report(_config: &RunConfig, out: &Path, traces: &Path) -> Result<()> {
    let mut by_policy: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(traces)?
        .map(|e| Ok(e?.path()))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Some(stem) = name.strip_suffix(".csv") else { continue };
        let Some((policy, _ep)) = stem.rsplit_once("_ep") else { continue };
        let mean = trace_mean_mse(&path)?;
        by_policy.entry(policy.to_string()).or_default().push(mean);
    }
    if by_policy.is_empty() {
        return Err(Error::invalid(format!("no trace CSVs found in {traces:?}")));
    }
    let rows: Vec<(String, usize, f64, f64)> = by_policy
        .into_iter()
        .map(|(name, means)| {
            let (mean, stderr) = aggregate(&means);
            (name, means.len(), mean, stderr)
        })
        .collect();
    for (name, _, mean, stderr) in &rows {
        println!("{name:>16}: mse {mean:.6} +- {stderr:.6}");
    }
    std::fs::write(out.join("report.csv"), render_report(&rows))?;
    Ok(())
}

/// Mean of the `mse` column of one trace CSV.
pub(crate) fn trace_mean_mse(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{path:?}: empty trace")))?;
    let mse_col = header
        .split(',')
        .position(|c| c == "mse")
        .ok_or_else(|| Error::Format(format!("{path:?}: no mse column")))?;
    let mut total = 0.0;
    let mut count = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let field = line
            .split(',')
            .nth(mse_col)
            .ok_or_else(|| Error::Format(format!("{path:?}: short row")))?;
        total += field
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("{path:?}: bad mse value {field:?}")))?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Format(format!("{path:?}: no data rows")));
    }
    Ok(total / count as f64)
}
