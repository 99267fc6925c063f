//! Behavior policies for offline data and calibrated rejection-sampling instances.

use gshf_core::env::RewardTable;
use gshf_core::policy::reward_gap;
use gshf_core::{BanditInstance, TabularPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// How offline comparisons are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Pi0,
    Uniform,
    /// Half the mass on each of the two lowest-reward actions per context, so
    /// the optimal policy's actions are never compared.
    WorstPair,
    /// Half the mass on actions 0 and 1 in every context, independent of reward.
    FixedPair,
}

pub fn behavior_policy(behavior: Behavior, instance: &BanditInstance) -> TabularPolicy {
    let rows: Vec<Vec<f64>> = match behavior {
        Behavior::Pi0 => return instance.pi0().clone(),
        Behavior::Uniform => return TabularPolicy::uniform_for(instance),
        Behavior::WorstPair => {
            let r = instance.true_rewards();
            (0..instance.num_contexts())
                .map(|x| {
                    let k = instance.num_actions(x);
                    let mut idx: Vec<usize> = (0..k).collect();
                    idx.sort_by(|&i, &j| r.get(x, i).total_cmp(&r.get(x, j)));
                    let mut row = vec![0.0; k];
                    row[idx[0]] = 0.5;
                    row[idx[1]] = 0.5;
                    row
                })
                .collect()
        }
        Behavior::FixedPair => (0..instance.num_contexts())
            .map(|x| {
                let mut row = vec![0.0; instance.num_actions(x)];
                row[0] = 0.5;
                row[1] = 0.5;
                row
            })
            .collect(),
    };
    TabularPolicy::new(rows).expect("two-point rows are valid distributions")
}

/// Mass of the single top action in [`calibrated_gap_instance`].
pub const CALIBRATION_TOP_MASS: f64 = 1e-9;

/// One context with a rare top action of reward 1 (mass `top_mass`) and
/// `actions − 1` equally likely bulk actions of reward `1 − g`, where `g` is
/// solved so that the reward gap `r_x` at `eta` equals `gap` exactly.
pub fn calibrated_gap_instance(
    eta: f64,
    gap: f64,
    actions: usize,
    top_mass: f64,
) -> CliResult<(TabularPolicy, RewardTable)> {
    let target = (-gap / eta).exp();
    if actions < 2 || !(top_mass > 0.0 && top_mass < target) {
        return Err(CliError::Validation(format!(
            "calibration needs ≥2 actions and a top mass below exp(−r_x/η) = {target:e}"
        )));
    }
    let bulk_gap = -eta * ((target - top_mass) / (1.0 - top_mass)).ln();
    let mut pi0 = vec![(1.0 - top_mass) / (actions - 1) as f64; actions];
    pi0[0] = top_mass;
    let mut rewards = vec![1.0 - bulk_gap; actions];
    rewards[0] = 1.0;
    debug_assert!((reward_gap(&rewards, &pi0, eta) - gap).abs() < 1e-9);
    Ok((TabularPolicy::new(vec![pi0])?, RewardTable::new(vec![rewards])))
}
