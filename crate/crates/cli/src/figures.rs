//! Figure data: the Gaussian-mixture Gibbs tilt, rejection-sampling
//! acceptance against ladder length, and the online reward–KL frontier.

use std::path::{Path, PathBuf};

use gshf_core::env::RewardTable;
use gshf_core::policy::{expected_kl, rejection_sample_step, EtaLadder};
use gshf_core::rng::substream;
use gshf_core::{generate_instance, gibbs_oracle, online_gshf, GshfConfig, InstanceSpec, TabularPolicy};
use serde::Serialize;

use crate::designs::{calibrated_gap_instance, CALIBRATION_TOP_MASS};
use crate::error::{CliError, CliResult};
use crate::output::{ensure_dir, svg, Manifest, TableWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FigureName {
    GibbsTilt,
    RsoAcceptance,
    OnlineFrontier,
}

impl FigureName {
    pub fn slug(self) -> &'static str {
        match self {
            Self::GibbsTilt => "gibbs-tilt",
            Self::RsoAcceptance => "rso-acceptance",
            Self::OnlineFrontier => "online-frontier",
        }
    }
}

impl std::str::FromStr for FigureName {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "gibbs-tilt" => Ok(Self::GibbsTilt),
            "rso-acceptance" => Ok(Self::RsoAcceptance),
            "online-frontier" => Ok(Self::OnlineFrontier),
            other => Err(CliError::Validation(format!(
                "unknown figure `{other}` (expected gibbs-tilt, rso-acceptance or online-frontier)"
            ))),
        }
    }
}

pub const GRID: usize = 64;
pub const GRID_HALF_WIDTH: f64 = 4.0;
/// Inverse KL coefficients rendered by the tilt figure; 0 is the untilted prior.
pub const TILT_INVERSE_ETAS: [f64; 4] = [0.0, 0.5, 1.0, 10.0];
/// Stand-in for `η = ∞`: large enough that the tilt is below 1e-9 per cell.
const UNTILTED_ETA: f64 = 1e12;

/// `(weight, mean, standard deviation)` of the isotropic mixture prior.
pub const MIXTURE: [(f64, [f64; 2], f64); 3] =
    [(0.45, [-1.5, -1.0], 0.8), (0.35, [0.5, 1.5], 0.6), (0.20, [2.0, -1.5], 0.5)];

pub fn grid_points() -> Vec<[f64; 2]> {
    let step = 2.0 * GRID_HALF_WIDTH / (GRID - 1) as f64;
    let mut pts = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            pts.push([-GRID_HALF_WIDTH + i as f64 * step, -GRID_HALF_WIDTH + j as f64 * step]);
        }
    }
    pts
}

/// Mixture prior normalized over the grid, one context.
pub fn mixture_prior() -> TabularPolicy {
    let weights: Vec<f64> = grid_points()
        .iter()
        .map(|p| {
            MIXTURE
                .iter()
                .map(|(w, m, s)| {
                    let d2 = (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
                    w * (-d2 / (2.0 * s * s)).exp() / (s * s)
                })
                .sum()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    TabularPolicy::new(vec![weights.into_iter().map(|w| w / total).collect()]).expect("mixture is a distribution")
}

#[derive(Debug, Clone, Serialize)]
pub struct TiltRow {
    pub manifest_hash: String,
    pub inverse_eta: f64,
    pub a1: f64,
    pub a2: f64,
    pub probability: f64,
    pub prior: f64,
}

/// Gibbs tilt of the mixture prior under `r(a) = a₁`.
pub fn gibbs_tilt_data() -> CliResult<Vec<TiltRow>> {
    let pts = grid_points();
    let prior = mixture_prior();
    let rewards = RewardTable::new(vec![pts.iter().map(|p| p[0]).collect()]);
    let mut rows = Vec::new();
    for &inv in &TILT_INVERSE_ETAS {
        let eta = if inv == 0.0 { UNTILTED_ETA } else { 1.0 / inv };
        let pi = gibbs_oracle(&rewards, &prior, eta)?;
        for (k, p) in pts.iter().enumerate() {
            rows.push(TiltRow {
                manifest_hash: String::new(),
                inverse_eta: inv,
                a1: p[0],
                a2: p[1],
                probability: pi.prob(0, k),
                prior: prior.prob(0, k),
            });
        }
    }
    Ok(rows)
}

pub const RSO_ETAS: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
pub const RSO_MAX_STEPS: usize = 12;
pub const RSO_REWARD_GAP: f64 = 1.0;
pub const RSO_ACTIONS: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct RsoRow {
    pub manifest_hash: String,
    pub eta: f64,
    pub steps: usize,
    pub step: usize,
    pub proposal_eta: Option<f64>,
    pub stage_eta: f64,
    pub expected_rate: f64,
    pub empirical_rate: f64,
    pub candidates: usize,
    pub accepted: usize,
}

/// Per-stage acceptance for `N = 1..=RSO_MAX_STEPS` on the instance
/// calibrated to `r_x = 1` at each target `η`. Stage proposals are the
/// exact Gibbs policies of the previous rung.
pub fn rso_acceptance_data(seed: u64, budget: usize) -> CliResult<Vec<RsoRow>> {
    let mut rows = Vec::new();
    for (e, &eta) in RSO_ETAS.iter().enumerate() {
        let (pi0, rewards) = calibrated_gap_instance(eta, RSO_REWARD_GAP, RSO_ACTIONS, CALIBRATION_TOP_MASS)?;
        for steps in 1..=RSO_MAX_STEPS {
            let ladder = EtaLadder::linear_inverse(eta, steps)?;
            let mut rng = substream(seed, &[e as u64, steps as u64]);
            let mut proposal_eta = None;
            for (i, &stage_eta) in ladder.etas().iter().enumerate() {
                let proposal = match proposal_eta {
                    None => pi0.clone(),
                    Some(pe) => gibbs_oracle(&rewards, &pi0, pe)?,
                };
                let (_, rep) = rejection_sample_step(&proposal, stage_eta, proposal_eta, &rewards, 0, budget, i + 1, &mut rng)?;
                rows.push(RsoRow {
                    manifest_hash: String::new(),
                    eta,
                    steps,
                    step: i + 1,
                    proposal_eta,
                    stage_eta,
                    expected_rate: rep.expected_rate(),
                    empirical_rate: rep.acceptance_rate.unwrap_or(0.0),
                    candidates: rep.candidates,
                    accepted: rep.accepted,
                });
                proposal_eta = Some(stage_eta);
            }
        }
    }
    Ok(rows)
}

pub const FRONTIER_ETAS: [f64; 3] = [0.1, 0.3, 1.0];

#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    pub manifest_hash: String,
    pub eta: f64,
    pub t: usize,
    pub kl_main: f64,
    pub reward_main: f64,
    pub value_main: f64,
    pub kl_optimal: f64,
    pub reward_optimal: f64,
}

/// `(KL(π¹ₜ‖π0), E r*(π¹ₜ))` per iteration of an online run on one synthetic
/// instance (d = 4, 8 contexts, 6 actions, B = 2), for several `η`.
pub fn online_frontier_data(seed: u64) -> CliResult<Vec<FrontierRow>> {
    let base = generate_instance(&InstanceSpec::new(4, 8, 6, 2.0, 1.0), &mut substream(seed, &[0]))?;
    let mut rows = Vec::new();
    for (e, &eta) in FRONTIER_ETAS.iter().enumerate() {
        let inst = base.with_eta(eta)?;
        let r = inst.true_rewards();
        let mean_reward = |pi: &TabularPolicy| -> f64 {
            (0..inst.num_contexts())
                .map(|x| inst.d0()[x] * pi.row(x).iter().zip(r.row(x)).map(|(p, v)| p * v).sum::<f64>())
                .sum()
        };
        let cfg = GshfConfig::new(eta).with_online_lambda(&inst);
        let traj = online_gshf(&inst, &[], &cfg, &mut substream(seed, &[1, e as u64]))?;
        let star = inst.optimal_policy();
        let (kl_star, r_star) = (expected_kl(&star, inst.pi0(), inst.d0())?, mean_reward(&star));
        for rec in &traj.records {
            rows.push(FrontierRow {
                manifest_hash: String::new(),
                eta,
                t: rec.t,
                kl_main: expected_kl(&rec.main_policy, inst.pi0(), inst.d0())?,
                reward_main: mean_reward(&rec.main_policy),
                value_main: rec.value_main,
                kl_optimal: kl_star,
                reward_optimal: r_star,
            });
        }
    }
    Ok(rows)
}

/// Budget per stage used by `gshf figure rso-acceptance`.
pub const RSO_FIGURE_BUDGET: usize = 200_000;

/// Writes `<name>.csv`, `<name>.svg` and `manifest.json` into `out_dir`.
pub fn reproduce_figure(name: FigureName, out_dir: &Path, seed: u64) -> CliResult<(String, Vec<PathBuf>)> {
    ensure_dir(out_dir)?;
    let slug = name.slug();
    let params = match name {
        FigureName::GibbsTilt => serde_json::json!({
            "grid": GRID, "half_width": GRID_HALF_WIDTH, "inverse_etas": TILT_INVERSE_ETAS,
            "mixture": MIXTURE.iter().map(|(w, m, s)| serde_json::json!({"weight": w, "mean": m, "std": s})).collect::<Vec<_>>(),
            "reward": "a1",
        }),
        FigureName::RsoAcceptance => serde_json::json!({
            "etas": RSO_ETAS, "max_steps": RSO_MAX_STEPS, "reward_gap": RSO_REWARD_GAP,
            "actions": RSO_ACTIONS, "top_mass": CALIBRATION_TOP_MASS, "budget": RSO_FIGURE_BUDGET,
        }),
        FigureName::OnlineFrontier => serde_json::json!({
            "etas": FRONTIER_ETAS, "dim": 4, "contexts": 8, "actions": 6, "bound": 2.0,
        }),
    };
    let mut manifest = Manifest::new("figure", slug, seed, params);
    manifest.files = vec![format!("{slug}.csv"), format!("{slug}.svg")];
    let hash = manifest.write(out_dir)?;
    let csv_path = out_dir.join(format!("{slug}.csv"));
    let svg_path = out_dir.join(format!("{slug}.svg"));
    let mut table = TableWriter::create(&csv_path)?;
    let picture = match name {
        FigureName::GibbsTilt => {
            let rows = gibbs_tilt_data()?;
            let mut panels = Vec::new();
            for chunk in rows.chunks(GRID * GRID) {
                let label = if chunk[0].inverse_eta == 0.0 { "prior".into() } else { format!("1/η = {}", chunk[0].inverse_eta) };
                panels.push((label, chunk.iter().map(|r| r.probability).collect()));
            }
            for mut r in rows {
                r.manifest_hash = hash.clone();
                table.row(&r)?;
            }
            svg::heat_maps("Gibbs tilt of a Gaussian-mixture prior, r(a) = a1", &panels, GRID, &hash)
        }
        FigureName::RsoAcceptance => {
            let rows = rso_acceptance_data(seed, RSO_FIGURE_BUDGET)?;
            let series: Vec<svg::Series> = RSO_ETAS
                .iter()
                .map(|&eta| svg::Series {
                    label: format!("η = {eta}"),
                    points: (1..=RSO_MAX_STEPS)
                        .map(|n| {
                            let min = rows
                                .iter()
                                .filter(|r| r.eta == eta && r.steps == n)
                                .map(|r| r.expected_rate)
                                .fold(f64::INFINITY, f64::min);
                            (n as f64, min)
                        })
                        .collect(),
                })
                .collect();
            for mut r in rows {
                r.manifest_hash = hash.clone();
                table.row(&r)?;
            }
            svg::line_chart("Smallest per-step acceptance vs ladder length", "stages N", "acceptance", &series, false, &hash)
        }
        FigureName::OnlineFrontier => {
            let rows = online_frontier_data(seed)?;
            let series: Vec<svg::Series> = FRONTIER_ETAS
                .iter()
                .map(|&eta| svg::Series {
                    label: format!("η = {eta}"),
                    points: rows.iter().filter(|r| r.eta == eta).map(|r| (r.kl_main, r.reward_main)).collect(),
                })
                .collect();
            for mut r in rows {
                r.manifest_hash = hash.clone();
                table.row(&r)?;
            }
            svg::line_chart("Reward–KL path of the main agent", "KL(π_t ‖ π0)", "E r*", &series, false, &hash)
        }
    };
    table.finish()?;
    std::fs::write(&svg_path, picture).map_err(CliError::io(&svg_path))?;
    Ok((hash, vec![out_dir.join("manifest.json"), csv_path, svg_path]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untilted_row_is_the_prior() {
        let rows = gibbs_tilt_data().unwrap();
        assert_eq!(rows.len(), TILT_INVERSE_ETAS.len() * GRID * GRID);
        for r in rows.iter().filter(|r| r.inverse_eta == 0.0) {
            assert!((r.probability - r.prior).abs() <= 1e-9);
        }
    }

    #[test]
    fn tilt_moves_mass_right() {
        let rows = gibbs_tilt_data().unwrap();
        let mean = |inv: f64| rows.iter().filter(|r| r.inverse_eta == inv).map(|r| r.a1 * r.probability).sum::<f64>();
        let means: Vec<f64> = TILT_INVERSE_ETAS.iter().map(|&i| mean(i)).collect();
        assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
    }

    #[test]
    fn single_step_rate_matches_the_gap() {
        let rows = rso_acceptance_data(0, 1000).unwrap();
        let r = rows.iter().find(|r| r.eta == 0.1 && r.steps == 1).unwrap();
        assert!((r.expected_rate - (-10f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn names_parse() {
        assert_eq!("rso-acceptance".parse::<FigureName>().unwrap(), FigureName::RsoAcceptance);
        assert_eq!("nope".parse::<FigureName>().unwrap_err().exit_code(), 1);
    }
}
