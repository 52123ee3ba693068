//! Faithfulness, interpretability and applicability metrics.
//!
//! * faithfulness: pixel-flipping curves and their area (lower is better),
//! * interpretability: number of pixels at or above a fraction of the map
//!   maximum,
//! * applicability: wall-clock time of each explanation pipeline over
//!   repeated runs.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::autonet::{forward, softmax, ActivationTape, Model};
use crate::csv::format_f64;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::pipeline::{explain_with_tape, MethodSpec};
use crate::tensor::{Matrix, Tensor};
use crate::trainer::{dataset_mean, LabeledImage};

/// Overhead bound reported for the method on full-size networks.
pub const REFERENCE_OVERHEAD: f64 = 0.10;
pub const DEFAULT_STEPS: usize = 64;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.99;
pub const WARMUP_RUNS: usize = 3;

/// What a "removed" pixel is replaced with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Replacement {
    Zero,
    Mean(f64),
}

impl Replacement {
    pub fn value(self) -> f64 {
        match self {
            Replacement::Zero => 0.0,
            Replacement::Mean(v) => v,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Replacement::Zero => "zero",
            Replacement::Mean(_) => "mean",
        }
    }
}

/// Replacement choice before a dataset mean is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplacementPolicy {
    Zero,
    DatasetMean,
}

impl FromStr for ReplacementPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(ReplacementPolicy::Zero),
            "mean" => Ok(ReplacementPolicy::DatasetMean),
            other => Err(Error::invalid(format!("unknown replacement policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlipCurve {
    /// `(fraction flipped, class score)`; fractions run `0, 1/steps, …, 1`.
    pub points: Vec<(f64, f64)>,
    pub method: String,
    pub image_id: usize,
    pub replacement: Replacement,
}

impl FlipCurve {
    pub fn to_csv(&self) -> String {
        curve_csv(&self.points)
    }
}

fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fraction,score\n");
    for &(f, s) in points {
        let _ = writeln!(out, "{},{}", format_f64(f), format_f64(s));
    }
    out
}

/// Pixels sorted by descending saliency, ties in row-major order.
pub fn flip_order(saliency: &Matrix) -> Vec<usize> {
    let d = saliency.data();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    order
}

/// Removes pixels from most to least salient in `steps` cumulative chunks of
/// `⌈H·W / steps⌉`, recording the softmax score of the originally predicted
/// class after each chunk.
pub fn pixel_flip_curve(
    model: &Model,
    image: &Tensor,
    saliency: &Matrix,
    steps: usize,
    replacement: Replacement,
) -> Result<FlipCurve> {
    if steps == 0 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    let (c, h, w) = image.chw()?;
    if c != 1 || saliency.dims() != (h, w) {
        return Err(Error::shape(format!(
            "saliency {:?} does not cover image {:?}",
            saliency.dims(),
            image.dims()
        )));
    }
    let (logits, _) = forward(model, image)?;
    let p = softmax(&logits);
    let class = p.argmax();
    let mut points = Vec::with_capacity(steps + 1);
    points.push((0.0, p.data()[class]));

    let order = flip_order(saliency);
    let n = order.len();
    let chunk = n.div_ceil(steps);
    let fill = replacement.value();
    let mut work = image.clone();
    let mut flipped = 0;
    for k in 1..=steps {
        let upto = (k * chunk).min(n);
        for &idx in &order[flipped..upto] {
            work.data_mut()[idx] = fill;
        }
        flipped = upto;
        let (logits, _) = forward(model, &work)?;
        points.push((k as f64 / steps as f64, softmax(&logits).data()[class]));
    }
    Ok(FlipCurve {
        points,
        method: String::new(),
        image_id: 0,
        replacement,
    })
}

/// Trapezoidal area under the curve.
pub fn auc_flip(curve: &FlipCurve) -> f64 {
    auc_points(&curve.points)
}

fn auc_points(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Pixels with saliency ≥ `threshold_frac · max`. An all-zero map has none.
pub fn significant_pixels(saliency: &Matrix, threshold_frac: f64) -> Result<(usize, Matrix)> {
    if !(threshold_frac > 0.0 && threshold_frac < 1.0) {
        return Err(Error::invalid(format!(
            "threshold fraction {threshold_frac} outside (0, 1)"
        )));
    }
    let max = saliency.max();
    let cut = threshold_frac * max;
    let mask: Vec<f64> = saliency
        .data()
        .iter()
        .map(|&v| if max > 0.0 && v >= cut { 1.0 } else { 0.0 })
        .collect();
    let count = mask.iter().filter(|&&v| v == 1.0).count();
    Ok((count, Matrix::from_vec(saliency.h(), saliency.w(), mask)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub samples: Vec<f64>,
}

impl BenchStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        BenchStats {
            mean,
            std: var.sqrt(),
            samples,
        }
    }
}

/// One timed unit of work: explaining one image with one method.
#[derive(Debug, Clone, Copy)]
pub struct PipelineTask<'a> {
    pub model: &'a Model,
    pub image: &'a Tensor,
    pub tape: &'a ActivationTape,
    pub spec: MethodSpec,
    /// Re-run the forward pass inside the timed span.
    pub include_forward: bool,
}

impl PipelineTask<'_> {
    pub fn run(&self) -> Result<Matrix> {
        let e = if self.include_forward {
            let (_, tape) = forward(self.model, self.image)?;
            explain_with_tape(self.model, &tape, self.spec, None, None)?
        } else {
            explain_with_tape(self.model, self.tape, self.spec, None, None)?
        };
        Ok(e.map)
    }
}

/// Times `runs` sequential executions after [`WARMUP_RUNS`] untimed ones.
pub fn runtime_benchmark(task: &PipelineTask, runs: usize) -> Result<BenchStats> {
    benchmark_fn(|| task.run().map(drop), runs)
}

pub fn benchmark_fn(mut f: impl FnMut() -> Result<()>, runs: usize) -> Result<BenchStats> {
    if runs < 2 {
        return Err(Error::invalid("benchmark needs at least 2 runs"));
    }
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(BenchStats::from_samples(samples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiaConfig {
    pub steps: usize,
    pub threshold: f64,
    pub replacement: ReplacementPolicy,
    pub runs: usize,
    pub min_confidence: f64,
    /// Cap on the cohort size, first qualifying images first.
    pub max_images: Option<usize>,
}

impl Default for FiaConfig {
    fn default() -> Self {
        FiaConfig {
            steps: DEFAULT_STEPS,
            threshold: DEFAULT_THRESHOLD,
            replacement: ReplacementPolicy::Zero,
            runs: DEFAULT_RUNS,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            max_images: None,
        }
    }
}

impl FiaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.runs < 2 {
            return Err(Error::invalid("runs must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(Error::invalid(format!(
                "min confidence {} outside [0, 1]",
                self.min_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub spec: MethodSpec,
    pub mean_curve: Vec<(f64, f64)>,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub aucs: Vec<f64>,
    pub significant_median: f64,
    pub significant_counts: Vec<usize>,
    /// Attribution plus presentation, forward pass excluded.
    pub runtime: BenchStats,
    /// Same span with the forward pass included.
    pub runtime_end_to_end: BenchStats,
}

/// Gradual vs bilinear presentation of the same base method.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub base: String,
    pub delta_auc: f64,
    pub delta_significant_median: f64,
    /// `(t_gradual - t_bilinear) / t_bilinear`, forward excluded.
    pub overhead: f64,
    pub overhead_end_to_end: f64,
    /// Extra seconds per image.
    pub overhead_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiaReport {
    pub config: FiaConfig,
    pub replacement: Replacement,
    pub image_count: usize,
    pub image_ids: Vec<usize>,
    pub methods: Vec<MethodReport>,
    pub timing_image: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let s = BenchStats::from_samples(values.to_vec());
    (s.mean, s.std)
}

struct Qualified {
    id: usize,
    tape: ActivationTape,
}

/// Runs the three metric families for every method over the images the model
/// classifies correctly with at least `config.min_confidence`.
pub fn run_fia(
    model: &Model,
    dataset: &[LabeledImage],
    methods: &[MethodSpec],
    config: &FiaConfig,
) -> Result<FiaReport> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods requested"));
    }
    let replacement = match config.replacement {
        ReplacementPolicy::Zero => Replacement::Zero,
        ReplacementPolicy::DatasetMean => Replacement::Mean(dataset_mean(dataset)),
    };

    let mut cohort = Vec::new();
    for (id, li) in dataset.iter().enumerate() {
        if config.max_images.is_some_and(|m| cohort.len() >= m) {
            break;
        }
        let (logits, tape) = forward(model, &li.image)?;
        let p = softmax(&logits);
        let pred = p.argmax();
        if pred == li.label && p.data()[pred] >= config.min_confidence {
            cohort.push(Qualified { id, tape });
        }
    }
    if cohort.is_empty() {
        return Err(Error::EmptyCohort {
            min_confidence: config.min_confidence,
        });
    }

    let mut reports = Vec::with_capacity(methods.len());
    for &spec in methods {
        let mut curves = Vec::with_capacity(cohort.len());
        let mut aucs = Vec::with_capacity(cohort.len());
        let mut counts = Vec::with_capacity(cohort.len());
        for q in &cohort {
            let image = &dataset[q.id].image;
            let e = explain_with_tape(model, &q.tape, spec, None, None)?;
            let mut curve = pixel_flip_curve(model, image, &e.map, config.steps, replacement)?;
            curve.method = spec.name();
            curve.image_id = q.id;
            aucs.push(auc_flip(&curve));
            counts.push(significant_pixels(&e.map, config.threshold)?.0);
            curves.push(curve);
        }
        let n = curves.len() as f64;
        let mean_curve = (0..=config.steps)
            .map(|k| {
                let score = curves.iter().map(|c| c.points[k].1).sum::<f64>() / n;
                (curves[0].points[k].0, score)
            })
            .collect();
        let (auc_mean, auc_std) = mean_std(&aucs);
        let mut sig: Vec<f64> = counts.iter().map(|&c| c as f64).collect();

        let first = &cohort[0];
        let task = PipelineTask {
            model,
            image: &dataset[first.id].image,
            tape: &first.tape,
            spec,
            include_forward: false,
        };
        let runtime = runtime_benchmark(&task, config.runs)?;
        let runtime_end_to_end = runtime_benchmark(
            &PipelineTask {
                include_forward: true,
                ..task
            },
            config.runs,
        )?;
        reports.push(MethodReport {
            spec,
            mean_curve,
            auc_mean,
            auc_std,
            aucs,
            significant_median: median(&mut sig),
            significant_counts: counts,
            runtime,
            runtime_end_to_end,
        });
    }
    Ok(FiaReport {
        config: config.clone(),
        replacement,
        image_count: cohort.len(),
        image_ids: cohort.iter().map(|q| q.id).collect(),
        methods: reports,
        timing_image: cohort[0].id,
    })
}

impl FiaReport {
    pub fn method(&self, spec: MethodSpec) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.spec == spec)
    }

    /// One entry per base method present in both presentations.
    pub fn comparisons(&self) -> Vec<Comparison> {
        let mut out = Vec::new();
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(&m.spec.method) {
                continue;
            }
            let bil = self.method(MethodSpec::new(m.spec.method, false));
            let grad = self.method(MethodSpec::new(m.spec.method, true));
            if let (Some(b), Some(g)) = (bil, grad) {
                seen.push(m.spec.method);
                out.push(Comparison {
                    base: m.spec.method.to_string(),
                    delta_auc: g.auc_mean - b.auc_mean,
                    delta_significant_median: g.significant_median - b.significant_median,
                    overhead: (g.runtime.mean - b.runtime.mean) / b.runtime.mean,
                    overhead_end_to_end: (g.runtime_end_to_end.mean - b.runtime_end_to_end.mean)
                        / b.runtime_end_to_end.mean,
                    overhead_seconds: g.runtime.mean - b.runtime.mean,
                });
            }
        }
        out
    }

    pub fn curve_file_name(index: usize, spec: MethodSpec) -> String {
        format!("curve_{index}_{}.csv", spec.name())
    }

    /// Key-value text with `[section]` headers; see `docs/formats.md`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# gradex evaluation report");
        let _ = writeln!(s, "format = 1");
        let _ = writeln!(s, "\n[cohort]");
        let _ = writeln!(s, "images = {}", self.image_count);
        let _ = writeln!(s, "min_confidence = {}", self.config.min_confidence);
        let _ = writeln!(s, "steps = {}", self.config.steps);
        let _ = writeln!(s, "replacement = {}", self.replacement.name());
        let _ = writeln!(s, "replacement_value = {}", format_f64(self.replacement.value()));
        let _ = writeln!(s, "threshold = {}", self.config.threshold);
        let _ = writeln!(s, "runs = {}", self.config.runs);
        let _ = writeln!(s, "warmup_runs = {WARMUP_RUNS}");
        let _ = writeln!(s, "timing_image = {}", self.timing_image);
        let _ = writeln!(s, "curve_score = mean softmax probability of the originally predicted class");
        for (i, m) in self.methods.iter().enumerate() {
            let _ = writeln!(s, "\n[method {}]", m.spec.name());
            let _ = writeln!(s, "index = {i}");
            let _ = writeln!(s, "base = {}", m.spec.method);
            let _ = writeln!(s, "gradual = {}", m.spec.gradual);
            let _ = writeln!(s, "auc_mean = {}", format_f64(m.auc_mean));
            let _ = writeln!(s, "auc_std = {}", format_f64(m.auc_std));
            let _ = writeln!(s, "auc_n = {}", m.aucs.len());
            let _ = writeln!(s, "significant_pixels_median = {}", m.significant_median);
            let _ = writeln!(s, "significant_pixels_n = {}", m.significant_counts.len());
            let _ = writeln!(s, "runtime_mean_s = {}", format_f64(m.runtime.mean));
            let _ = writeln!(s, "runtime_std_s = {}", format_f64(m.runtime.std));
            let _ = writeln!(s, "runtime_runs = {}", m.runtime.samples.len());
            let _ = writeln!(s, "runtime_e2e_mean_s = {}", format_f64(m.runtime_end_to_end.mean));
            let _ = writeln!(s, "runtime_e2e_std_s = {}", format_f64(m.runtime_end_to_end.std));
            let _ = writeln!(s, "runtime_e2e_runs = {}", m.runtime_end_to_end.samples.len());
            let _ = writeln!(s, "curve_file = {}", Self::curve_file_name(i, m.spec));
        }
        for c in self.comparisons() {
            let _ = writeln!(s, "\n[comparison {}]", c.base);
            let _ = writeln!(s, "delta_auc = {}", format_f64(c.delta_auc));
            let _ = writeln!(s, "delta_significant_pixels_median = {}", c.delta_significant_median);
            let _ = writeln!(s, "overhead_ratio = {}", format_f64(c.overhead));
            let _ = writeln!(s, "overhead_ratio_e2e = {}", format_f64(c.overhead_end_to_end));
            let _ = writeln!(s, "overhead_seconds = {}", format_f64(c.overhead_seconds));
            let _ = writeln!(s, "reference_overhead = {REFERENCE_OVERHEAD}");
        }
        s
    }

    /// Writes `report.txt` and one curve CSV per method into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, m) in self.methods.iter().enumerate() {
            write_atomic(&dir.join(Self::curve_file_name(i, m.spec)), curve_csv(&m.mean_curve).as_bytes())?;
        }
        write_atomic(&dir.join("report.txt"), self.to_text().as_bytes())
    }
}
