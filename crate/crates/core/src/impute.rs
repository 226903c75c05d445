//! Gap detection and recursive reverse-diffusion imputation.
//!
//! Each missing step `k+h` of a gap is generated by one full reverse chain
//! conditioned on the previously generated state `x̂_{k+h-1}` and the
//! covariates at `k+h`. All sampling happens in z-score space.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{zscore_apply, Ledger, TimeSeriesTable, ZScoreStats};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::eval::{
    column_options, kalman_filter_fill, linear_fill, locf_decay_fill, ImputationMethod,
};
use crate::model::{ContextBatch, Denoiser};
use crate::train::{train, TrainConfig};

/// Half-life, in steps, of the decay towards the channel mean used by the
/// `locf` covariate fallback.
pub const LOCF_DECAY_HALF_LIFE: f64 = 48.0;

/// One contiguous block of rows with at least one missing state channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpec {
    /// Last fully observed step before the gap; `None` for a gap at the series start.
    pub anchor: Option<usize>,
    /// First missing row.
    pub start: usize,
    pub horizon: usize,
    /// State channels missing somewhere in the block.
    pub channels: Vec<String>,
}

impl GapSpec {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.horizon
    }
}

/// Maximal runs of rows where any state channel is missing.
pub fn find_gaps(table: &TimeSeriesTable) -> Vec<GapSpec> {
    let states = table.state_indices();
    let mut gaps = Vec::new();
    let mut t = 0;
    while t < table.len() {
        if table.state_fully_observed(t) {
            t += 1;
            continue;
        }
        let start = t;
        while t < table.len() && !table.state_fully_observed(t) {
            t += 1;
        }
        let channels = states
            .iter()
            .filter(|&&c| (start..t).any(|r| !table.is_observed(r, c)))
            .map(|&c| table.channels()[c].name.clone())
            .collect();
        gaps.push(GapSpec {
            anchor: start.checked_sub(1),
            start,
            horizon: t - start,
            channels,
        });
    }
    gaps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMode {
    Full,
    HistoryOnly,
}

impl FromStr for ImputeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "history-only" | "history_only" => Ok(Self::HistoryOnly),
            other => Err(Error::Config(format!("unknown mode `{other}` (expected full|history-only)"))),
        }
    }
}

impl fmt::Display for ImputeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::HistoryOnly => "history-only",
        })
    }
}

/// How missing covariates are presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateFallback {
    /// Value 0 with mask bit 0.
    MaskZero,
    /// Last observation decaying towards the channel mean.
    Locf,
    /// Linear interpolation between flanking observations.
    Linear,
    /// Filtered mean of a local-level model fitted on the observed values.
    Kalman,
}

impl FromStr for CovariateFallback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-zero" | "mask_zero" => Ok(Self::MaskZero),
            "locf" | "locf-decay" | "locf_decay" => Ok(Self::Locf),
            "linear" => Ok(Self::Linear),
            "kalman" => Ok(Self::Kalman),
            other => Err(Error::Config(format!(
                "unknown covariate fallback `{other}` (expected mask-zero|locf|linear|kalman)"
            ))),
        }
    }
}

impl fmt::Display for CovariateFallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaskZero => "mask-zero",
            Self::Locf => "locf",
            Self::Linear => "linear",
            Self::Kalman => "kalman",
        })
    }
}

/// Covariate values and mask bits for every row, in z-score space,
/// columns ordered control then exogenous.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateInputs {
    pub values: Array2<f64>,
    pub mask: Array2<f64>,
}

impl CovariateInputs {
    /// Resolves missing covariates of a normalized table. Fallback-filled
    /// entries are presented as observed.
    pub fn build(table_z: &TimeSeriesTable, mode: ImputeMode, fallback: CovariateFallback) -> Result<Self> {
        let cov = table_z.covariate_indices();
        let mut values = Array2::zeros((table_z.len(), cov.len()));
        let mut mask = Array2::zeros((table_z.len(), cov.len()));
        if mode == ImputeMode::HistoryOnly {
            return Ok(Self { values, mask });
        }
        for (j, &c) in cov.iter().enumerate() {
            let col = column_options(table_z, c);
            let filled = match fallback {
                CovariateFallback::MaskZero => None,
                CovariateFallback::Locf => Some(locf_decay_fill(&col, LOCF_DECAY_HALF_LIFE, 0.0)),
                CovariateFallback::Linear => Some(linear_fill(&col)),
                CovariateFallback::Kalman => Some(kalman_filter_fill(&col)),
            };
            let filled = match filled {
                Some(Ok(f)) => Some(f),
                Some(Err(Error::Baseline(msg))) => {
                    log::warn!("covariate `{}`: {msg}; using mask-and-zero", table_z.channels()[c].name);
                    None
                }
                Some(Err(e)) => return Err(e),
                None => None,
            };
            for (t, v) in col.iter().enumerate() {
                match (v, &filled) {
                    (Some(v), _) => {
                        values[[t, j]] = *v;
                        mask[[t, j]] = 1.0;
                    }
                    (None, Some(f)) => {
                        values[[t, j]] = f[t];
                        mask[[t, j]] = 1.0;
                    }
                    (None, None) => {}
                }
            }
        }
        Ok(Self { values, mask })
    }
}

/// Samples for one gap, in z-score space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationResult {
    /// `(samples, horizon, state_dim)`
    pub samples: Array3<f64>,
    /// Mean over samples, `(horizon, state_dim)`.
    pub point_estimate: Array2<f64>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Seed of the chain for the gap starting at `start`.
pub fn gap_seed(seed: u64, start: usize) -> u64 {
    seed ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_denoiser<D: Denoiser>(denoiser: &D, sched: &NoiseSchedule, state_dim: usize, cov_dim: usize) -> Result<()> {
    if denoiser.steps() != sched.steps() {
        return Err(Error::Config(format!(
            "model supports {} diffusion steps but the schedule has {}",
            denoiser.steps(),
            sched.steps()
        )));
    }
    if denoiser.state_dim() != state_dim || denoiser.covariate_dim() != cov_dim {
        return Err(Error::Config(format!(
            "model expects {} state and {} covariate channels, data has {state_dim} and {cov_dim}",
            denoiser.state_dim(),
            denoiser.covariate_dim()
        )));
    }
    Ok(())
}

/// Recursive sampling over `gap.rows()` of a normalized table.
///
/// Without an anchor the chain starts from the all-zero (channel-mean) state.
/// State channels observed inside a partially missing row replace the
/// generated values before the recursion continues.
pub fn impute_gap<D: Denoiser>(
    gap: &GapSpec,
    table_z: &TimeSeriesTable,
    covariates: &CovariateInputs,
    denoiser: &D,
    sched: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<ImputationResult> {
    let states = table_z.state_indices();
    let dx = states.len();
    let dc = covariates.values.ncols();
    check_denoiser(denoiser, sched, dx, dc)?;
    if samples == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    if gap.horizon == 0 || gap.start + gap.horizon > table_z.len() || covariates.values.nrows() != table_z.len() {
        return Err(Error::Parameter(format!(
            "gap [{}, {}) outside table of length {}",
            gap.start,
            gap.start + gap.horizon,
            table_z.len()
        )));
    }

    let mut x_prev = Array2::<f64>::zeros((samples, dx));
    if let Some(k) = gap.anchor {
        for (j, &c) in states.iter().enumerate() {
            let v = table_z
                .get(k, c)
                .ok_or_else(|| Error::Parameter(format!("anchor row {k} is not fully observed")))?;
            x_prev.column_mut(j).fill(v);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::<f64>::zeros((samples, gap.horizon, dx));
    let mut x = Array2::<f64>::zeros((samples, dx));
    for h in 0..gap.horizon {
        let t = gap.start + h;
        let ctx = ContextBatch {
            x_prev: x_prev.clone(),
            covariates: covariates.values.row(t).broadcast((samples, dc)).expect("row broadcast").to_owned(),
            mask: covariates.mask.row(t).broadcast((samples, dc)).expect("row broadcast").to_owned(),
        };
        let prepared = denoiser.prepare(&ctx)?;
        x.mapv_inplace(|_| rng.sample(StandardNormal));
        for tau in (1..=sched.steps()).rev() {
            let eps_hat = denoiser.predict(x.view(), tau, &prepared)?;
            let coef = sched.reverse_coefficients(tau)?;
            x.zip_mut_with(&eps_hat, |xi, &e| *xi = coef.inv_sqrt_alpha * (*xi - coef.eps_scale * e));
            if tau > 1 {
                x.mapv_inplace(|xi| xi + coef.noise_scale * rng.sample::<f64, _>(StandardNormal));
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SamplingDiverged(format!(
                "non-finite state generated at row {t} (gap starting at {})",
                gap.start
            )));
        }
        for (j, &c) in states.iter().enumerate() {
            if let Some(v) = table_z.get(t, c) {
                x.column_mut(j).fill(v);
            }
        }
        out.index_axis_mut(Axis(1), h).assign(&x);
        std::mem::swap(&mut x_prev, &mut x);
    }
    let point_estimate = out.mean_axis(Axis(0)).expect("at least one sample");
    Ok(ImputationResult {
        samples: out,
        point_estimate,
        sample_count: samples,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputeConfig {
    pub samples: usize,
    pub seed: u64,
    pub mode: ImputeMode,
    pub fallback: CovariateFallback,
    /// Impute gaps at the series start from the channel-mean state.
    pub anchor_leading: bool,
}

impl Default for ImputeConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            seed: 0,
            mode: ImputeMode::Full,
            fallback: CovariateFallback::MaskZero,
            anchor_leading: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapStatus {
    Imputed,
    Unanchorable,
}

impl fmt::Display for GapStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Imputed => "imputed",
            Self::Unanchorable => "unanchorable",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapOutcome {
    pub gap: GapSpec,
    pub status: GapStatus,
    pub result: Option<ImputationResult>,
}

#[derive(Debug, Clone)]
pub struct SeriesImputation {
    /// Input table with imputed state entries written back in original units.
    pub table: TimeSeriesTable,
    pub gaps: Vec<GapOutcome>,
}

/// Fills every anchorable gap of `table` (original units).
///
/// Observed entries are copied through untouched; only missing state entries
/// inside imputed gaps receive the de-normalized point estimate.
pub fn impute_series<D: Denoiser>(
    table: &TimeSeriesTable,
    denoiser: &D,
    sched: &NoiseSchedule,
    stats: &ZScoreStats,
    cfg: &ImputeConfig,
) -> Result<SeriesImputation> {
    let (dx, du, dw) = table.role_dims();
    check_denoiser(denoiser, sched, dx, du + dw)?;
    let table_z = zscore_apply(table, stats)?;
    let gaps = find_gaps(table);
    let covariates = if gaps.is_empty() {
        CovariateInputs {
            values: Array2::zeros((table.len(), du + dw)),
            mask: Array2::zeros((table.len(), du + dw)),
        }
    } else {
        CovariateInputs::build(&table_z, cfg.mode, cfg.fallback)?
    };

    let outcomes: Vec<GapOutcome> = gaps
        .into_par_iter()
        .map(|gap| {
            if gap.anchor.is_none() && !cfg.anchor_leading {
                log::warn!("gap at rows {}..{} has no anchor; left missing", gap.start, gap.start + gap.horizon);
                return Ok(GapOutcome {
                    gap,
                    status: GapStatus::Unanchorable,
                    result: None,
                });
            }
            let seed = gap_seed(cfg.seed, gap.start);
            let result = impute_gap(&gap, &table_z, &covariates, denoiser, sched, cfg.samples, seed)?;
            Ok(GapOutcome {
                gap,
                status: GapStatus::Imputed,
                result: Some(result),
            })
        })
        .collect::<Result<_>>()?;

    let states = table.state_indices();
    let stat_idx: Vec<usize> = states
        .iter()
        .map(|&c| {
            let name = &table.channels()[c].name;
            stats
                .index(name)
                .ok_or_else(|| Error::Config(format!("no normalization statistics for `{name}`")))
        })
        .collect::<Result<_>>()?;
    let mut values = table.values().clone();
    for o in &outcomes {
        let Some(r) = &o.result else { continue };
        for (h, t) in o.gap.rows().enumerate() {
            for (j, &c) in states.iter().enumerate() {
                if !table.is_observed(t, c) {
                    values[[t, c]] = stats.denormalize(stat_idx[j], r.point_estimate[[h, j]]);
                }
            }
        }
    }
    Ok(SeriesImputation {
        table: table.with_values(values)?,
        gaps: outcomes,
    })
}

/// [`impute_series`] after checking that the checkpoint matches the table.
pub fn impute_with_checkpoint(
    table: &TimeSeriesTable,
    checkpoint: &Checkpoint,
    cfg: &ImputeConfig,
) -> Result<SeriesImputation> {
    checkpoint.check_compatible(table)?;
    let denoiser = checkpoint.denoiser()?;
    impute_series(table, &denoiser, &checkpoint.schedule()?, &checkpoint.stats, cfg)
}

/// Per-gap report: `gap_id,anchor,start,horizon,status,channel,mae`.
///
/// With a ledger, `mae` is the error of `completed` on the gap's hidden
/// entries for that channel; otherwise it is left empty.
pub fn write_gap_report<W: Write>(
    writer: W,
    gaps: &[GapOutcome],
    completed: &TimeSeriesTable,
    truth: Option<&Ledger>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gap_id", "anchor", "start", "horizon", "status", "channel", "mae"])?;
    for (id, o) in gaps.iter().enumerate() {
        for ch in &o.gap.channels {
            let mae = truth.and_then(|ledger| {
                let c = completed.channel_index(ch)?;
                let errs: Vec<f64> = ledger
                    .entries
                    .iter()
                    .filter(|e| e.channel == *ch && o.gap.rows().contains(&e.t))
                    .filter_map(|e| completed.get(e.t, c).map(|v| (v - e.true_value).abs()))
                    .collect();
                (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
            });
            w.write_record([
                id.to_string(),
                o.gap.anchor.map(|a| a.to_string()).unwrap_or_default(),
                o.gap.start.to_string(),
                o.gap.horizon.to_string(),
                o.status.to_string(),
                ch.clone(),
                mae.map(|m| m.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Train on the masked table, then impute it; for degradation curves.
#[derive(Debug, Clone)]
pub struct StdiffMethod {
    pub label: String,
    pub train: TrainConfig,
    pub impute: ImputeConfig,
}

impl StdiffMethod {
    /// Leading gaps are always imputed so that every hidden entry gets a value.
    pub fn new(train: TrainConfig, impute: ImputeConfig) -> Self {
        Self {
            label: "stdiff".into(),
            train,
            impute: ImputeConfig {
                anchor_leading: true,
                ..impute
            },
        }
    }
}

impl ImputationMethod for StdiffMethod {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn impute(&self, masked: &TimeSeriesTable, seed: u64) -> Result<TimeSeriesTable> {
        let train_cfg = TrainConfig {
            seed: self.train.seed ^ seed,
            ..self.train.clone()
        };
        let outcome = train(masked, &train_cfg)?;
        let denoiser = crate::model::ModelDenoiser::new(outcome.params, outcome.schedule.steps())?;
        let cfg = ImputeConfig {
            seed: self.impute.seed ^ seed,
            ..self.impute
        };
        Ok(impute_series(masked, &denoiser, &outcome.schedule, &outcome.stats, &cfg)?.table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Channel, Role};
    use crate::diffusion::ScheduleConfig;
    use ndarray::ArrayView2;

    /// Predicts the exact noise that maps every chain onto `target`.
    struct ConstantStub {
        target: f64,
        alpha_bar: Vec<f64>,
        dx: usize,
        dc: usize,
    }

    impl Denoiser for ConstantStub {
        type Prepared = ();

        fn state_dim(&self) -> usize {
            self.dx
        }

        fn covariate_dim(&self) -> usize {
            self.dc
        }

        fn steps(&self) -> usize {
            self.alpha_bar.len()
        }

        fn prepare(&self, _: &ContextBatch) -> Result<()> {
            Ok(())
        }

        fn predict(&self, x: ArrayView2<f64>, tau: usize, _: &()) -> Result<Array2<f64>> {
            let ab = self.alpha_bar[tau - 1];
            Ok(x.mapv(|v| (v - ab.sqrt() * self.target) / (1.0 - ab).sqrt()))
        }
    }

    /// Returns `x_prev + covariate sum` as the "noise"; sensitive to everything in the context.
    struct EchoStub {
        steps: usize,
    }

    impl Denoiser for EchoStub {
        type Prepared = Array2<f64>;

        fn state_dim(&self) -> usize {
            1
        }

        fn covariate_dim(&self) -> usize {
            1
        }

        fn steps(&self) -> usize {
            self.steps
        }

        fn prepare(&self, ctx: &ContextBatch) -> Result<Array2<f64>> {
            Ok(&ctx.x_prev * 0.1 + &ctx.covariates * 0.1 + &ctx.mask * 0.05)
        }

        fn predict(&self, x: ArrayView2<f64>, _: usize, p: &Array2<f64>) -> Result<Array2<f64>> {
            Ok(&x * 0.5 + p)
        }
    }

    fn sched(steps: usize) -> NoiseSchedule {
        ScheduleConfig::scaled(steps).build().unwrap()
    }

    fn table(x: &[f64], u: &[f64]) -> TimeSeriesTable {
        let v = Array2::from_shape_fn((x.len(), 2), |(t, c)| if c == 0 { x[t] } else { u[t] });
        TimeSeriesTable::from_steps(
            vec![Channel::new("x", Role::State), Channel::new("u", Role::Control)],
            v,
        )
        .unwrap()
    }

    fn identity_stats() -> ZScoreStats {
        ZScoreStats {
            channels: vec!["x".into(), "u".into()],
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        }
    }

    #[test]
    fn gap_detection() {
        let nan = f64::NAN;
        assert!(find_gaps(&table(&[1.0, 2.0, 3.0], &[0.0; 3])).is_empty());
        let g = find_gaps(&table(&[1.0, nan, 3.0, nan, nan], &[0.0; 5]));
        assert_eq!(
            g.iter().map(|g| (g.anchor, g.start, g.horizon)).collect::<Vec<_>>(),
            vec![(Some(0), 1, 1), (Some(2), 3, 2)]
        );
        assert_eq!(g[0].channels, vec!["x".to_string()]);
        assert_eq!(find_gaps(&table(&[nan, 1.0], &[0.0; 2]))[0].anchor, None);
    }

    #[test]
    fn recursion_reproduces_constant_state() {
        let s = sched(20);
        let stub = ConstantStub {
            target: 1.7,
            alpha_bar: s.alpha_bar().to_vec(),
            dx: 1,
            dc: 1,
        };
        let nan = f64::NAN;
        let t = table(&[0.3, nan, nan, nan, nan, nan, 0.0], &[0.0; 7]);
        let gap = &find_gaps(&t)[0];
        assert_eq!(gap.horizon, 5);
        let cov = CovariateInputs::build(&t, ImputeMode::Full, CovariateFallback::MaskZero).unwrap();
        let r = impute_gap(gap, &t, &cov, &stub, &s, 3, 9).unwrap();
        for v in r.samples.iter().chain(r.point_estimate.iter()) {
            assert!((v - 1.7).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn seeding_contract() {
        let s = sched(10);
        let t = table(&[0.3, f64::NAN, f64::NAN, 0.1], &[0.2; 4]);
        let gap = &find_gaps(&t)[0];
        let cov = CovariateInputs::build(&t, ImputeMode::Full, CovariateFallback::MaskZero).unwrap();
        let stub = EchoStub { steps: 10 };
        let a = impute_gap(gap, &t, &cov, &stub, &s, 2, 5).unwrap();
        let b = impute_gap(gap, &t, &cov, &stub, &s, 2, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples.index_axis(Axis(0), 0), a.samples.index_axis(Axis(0), 1));
        assert_eq!(a.point_estimate, a.samples.mean_axis(Axis(0)).unwrap());
    }

    #[test]
    fn later_covariates_do_not_affect_earlier_steps() {
        let s = sched(10);
        let nan = f64::NAN;
        let base = table(&[0.3, nan, nan, nan, nan, 0.0], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let stubbed = table(&[0.3, nan, nan, nan, nan, 0.0], &[0.1, 0.2, 0.3, 9.0, -9.0, 9.0]);
        let stub = EchoStub { steps: 10 };
        let run = |t: &TimeSeriesTable| {
            let cov = CovariateInputs::build(t, ImputeMode::Full, CovariateFallback::MaskZero).unwrap();
            impute_gap(&find_gaps(t)[0], t, &cov, &stub, &s, 4, 1).unwrap()
        };
        let (a, b) = (run(&base), run(&stubbed));
        // Rows 1 and 2 only see covariates at steps <= 2.
        assert_eq!(a.samples.slice(ndarray::s![.., 0..2, ..]), b.samples.slice(ndarray::s![.., 0..2, ..]));
        assert_ne!(a.samples.slice(ndarray::s![.., 2, ..]), b.samples.slice(ndarray::s![.., 2, ..]));
    }

    #[test]
    fn history_only_hides_covariates() {
        let t = table(&[0.0, f64::NAN, 1.0], &[0.5, f64::NAN, 2.0]);
        let h = CovariateInputs::build(&t, ImputeMode::HistoryOnly, CovariateFallback::Linear).unwrap();
        assert!(h.values.iter().chain(h.mask.iter()).all(|&v| v == 0.0));
        let l = CovariateInputs::build(&t, ImputeMode::Full, CovariateFallback::Linear).unwrap();
        assert_eq!(l.values.column(0).to_vec(), vec![0.5, 1.25, 2.0]);
        assert_eq!(l.mask.column(0).to_vec(), vec![1.0; 3]);
        let m = CovariateInputs::build(&t, ImputeMode::Full, CovariateFallback::MaskZero).unwrap();
        assert_eq!(m.mask.column(0).to_vec(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn series_imputation_preserves_observed_and_skips_leading_gap() {
        let nan = f64::NAN;
        let t = table(&[nan, 0.5, nan, nan, 0.25, nan], &[0.1, nan, 0.3, 0.4, 0.5, 0.6]);
        let stub = EchoStub { steps: 5 };
        let out = impute_series(&t, &stub, &sched(5), &identity_stats(), &ImputeConfig::default()).unwrap();
        assert_eq!(out.gaps[0].status, GapStatus::Unanchorable);
        assert!(!out.table.is_observed(0, 0));
        for r in 1..6 {
            assert!(out.table.is_observed(r, 0));
        }
        for (a, b) in t.values().iter().zip(out.table.values()) {
            if !a.is_nan() {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(!out.table.is_observed(1, 1));
        let full = table(&[1.0, 2.0], &[0.0, 0.0]);
        let same = impute_series(&full, &stub, &sched(5), &identity_stats(), &ImputeConfig::default()).unwrap();
        assert!(same.gaps.is_empty());
        assert_eq!(same.table, full);
    }

    #[test]
    fn mismatched_denoiser_is_a_config_error() {
        let t = table(&[0.0, f64::NAN, 1.0], &[0.0; 3]);
        let stub = EchoStub { steps: 5 };
        let err = impute_series(&t, &stub, &sched(6), &identity_stats(), &ImputeConfig::default()).unwrap_err();
        assert!(err.is_config(), "{err}");
    }
}
