//! Single-shot far-field frame synthesis with multimode twin-beam statistics.
//!
//! Mode amplitudes are drawn with symmetric-ordered (Wigner) Gaussian
//! sampling: each twin pair (l, p) <-> (-l, p) is a two-mode squeezer acting
//! on vacuum noise of variance 1/2 per complex dimension. Intensities are
//! rendered as |E|^2 with the vacuum level subtracted, so second moments are
//! exact at every gain.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::SourceConfig;
use crate::grid::PolarGrid;
use crate::schmidt::{GainedSpectrum, SchmidtDecomposition};

/// What the camera sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionMode {
    /// Signal + idler intensities (10 nm filter at the degenerate wavelength).
    Degenerate,
    /// Signal only, removing signal-idler cross-correlations (700 nm filter).
    SignalOnly,
}

impl DetectionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DetectionMode::Degenerate => "degenerate",
            DetectionMode::SignalOnly => "signal_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "degenerate" => Some(DetectionMode::Degenerate),
            "signal_only" => Some(DetectionMode::SignalOnly),
            _ => None,
        }
    }
}

/// One single-shot far-field intensity raster on the polar grid, row-major
/// with theta as the slow index.
#[derive(Clone, Debug)]
pub struct Frame {
    pub values: Vec<f32>,
    pub shot: usize,
    pub normalized: bool,
}

impl Frame {
    pub fn at(&self, i_theta: usize, j_phi: usize, n_phi: usize) -> f32 {
        self.values[i_theta * n_phi + j_phi]
    }
}

/// Ordered frames sharing one grid, plus everything needed to reproduce them.
#[derive(Clone, Debug)]
pub struct FrameStack {
    pub frames: Vec<Frame>,
    pub grid: PolarGrid,
    pub config: SourceConfig,
    pub seed: u64,
    pub detection_mode: DetectionMode,
    pub normalized: bool,
}

impl FrameStack {
    pub fn n_theta(&self) -> usize {
        self.grid.theta.len()
    }

    pub fn n_phi(&self) -> usize {
        self.grid.phi.len()
    }

    /// Total intensity of each frame (quadrature integral).
    pub fn total_intensities(&self) -> Vec<f64> {
        let n_phi = self.n_phi();
        self.frames
            .iter()
            .map(|f| {
                let mut total = 0.0;
                for i in 0..self.n_theta() {
                    let w = self.grid.weight(i);
                    for j in 0..n_phi {
                        total += f.at(i, j, n_phi) as f64 * w;
                    }
                }
                total
            })
            .collect()
    }
}

/// Complex mode amplitudes of one shot, indexed by signed l and p.
#[derive(Clone, Debug)]
pub struct ModeAmplitudes {
    pub l_max: i32,
    pub p_max: usize,
    /// Signal amplitudes c_lp, index (l + l_max) * p_max + p.
    pub c: Vec<Complex64>,
    /// Idler amplitudes d_lp, same indexing.
    pub d: Vec<Complex64>,
}

impl ModeAmplitudes {
    fn idx(&self, l: i32, p: usize) -> usize {
        ((l + self.l_max) as usize) * self.p_max + p
    }

    pub fn c_at(&self, l: i32, p: usize) -> Complex64 {
        self.c[self.idx(l, p)]
    }

    pub fn d_at(&self, l: i32, p: usize) -> Complex64 {
        self.d[self.idx(l, p)]
    }
}

fn vacuum_complex<R: Rng>(rng: &mut R) -> Complex64 {
    // circular complex Gaussian with <|z|^2> = 1/2
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * 0.5
}

/// Draw one shot of mode amplitudes via the Bogoliubov transform of vacuum
/// noise: c = cosh(g) a + sinh(g) b*, d = cosh(g) b + sinh(g) a*, pairing the
/// signal mode (l, p) with the idler mode (-l, p).
pub fn sample_amplitudes<R: Rng>(spec: &GainedSpectrum, rng: &mut R) -> ModeAmplitudes {
    let l_max = spec.l_max;
    let p_max = spec.p_max;
    let n = (2 * l_max + 1) as usize * p_max;
    let mut amps = ModeAmplitudes {
        l_max,
        p_max,
        c: vec![Complex64::new(0.0, 0.0); n],
        d: vec![Complex64::new(0.0, 0.0); n],
    };
    for l in 0..=l_max {
        for p in 0..p_max {
            let g = spec.squeeze(l, p);
            let (ch, sh) = (g.cosh(), g.sinh());
            // pair (l, p)_s <-> (-l, p)_i
            let a = vacuum_complex(rng);
            let b = vacuum_complex(rng);
            let i_cs = amps.idx(l, p);
            let i_di = amps.idx(-l, p);
            amps.c[i_cs] = ch * a + sh * b.conj();
            amps.d[i_di] = ch * b + sh * a.conj();
            if l > 0 {
                // independent pair (-l, p)_s <-> (l, p)_i
                let a2 = vacuum_complex(rng);
                let b2 = vacuum_complex(rng);
                let i_cs2 = amps.idx(-l, p);
                let i_di2 = amps.idx(l, p);
                amps.c[i_cs2] = ch * a2 + sh * b2.conj();
                amps.d[i_di2] = ch * b2 + sh * a2.conj();
            }
        }
    }
    amps
}

/// Draw one shot of signal amplitudes from the exact thermal marginal of each
/// signal mode: c_lp is circular Gaussian with <|c|^2> = sinh^2(g_lp). This
/// reproduces all normally ordered moments of the signal field without the
/// symmetric-ordering excess of the Bogoliubov vacuum draw, so no vacuum
/// subtraction is needed. Idler amplitudes are left at zero; twin-beam
/// correlations are not represented.
pub fn sample_thermal_amplitudes<R: Rng>(spec: &GainedSpectrum, rng: &mut R) -> ModeAmplitudes {
    let l_max = spec.l_max;
    let p_max = spec.p_max;
    let n = (2 * l_max + 1) as usize * p_max;
    let mut amps = ModeAmplitudes {
        l_max,
        p_max,
        c: vec![Complex64::new(0.0, 0.0); n],
        d: vec![Complex64::new(0.0, 0.0); n],
    };
    for l in -l_max..=l_max {
        for p in 0..p_max {
            let g = spec.squeeze(l, p);
            let scale = 2.0_f64.sqrt() * g.sinh();
            let idx = amps.idx(l, p);
            amps.c[idx] = scale * vacuum_complex(rng);
        }
    }
    amps
}

/// Frame synthesizer with precomputed phase tables and vacuum profile.
pub struct Synthesizer<'a> {
    dec: &'a SchmidtDecomposition,
    spec: &'a GainedSpectrum,
    pub detection_mode: DetectionMode,
    pub n_freq: usize,
    pub read_noise: f64,
    pub well_depth: f64,
    pub normalize: bool,
    pub seed: u64,
    /// e^{i l phi} for l = -l_max..=l_max, index (l + l_max).
    phase_table: Vec<Vec<Complex64>>,
    /// Per-field vacuum intensity profile over theta.
    vacuum: Vec<f64>,
}

impl<'a> Synthesizer<'a> {
    pub fn new(
        dec: &'a SchmidtDecomposition,
        spec: &'a GainedSpectrum,
        config: &SourceConfig,
        detection_mode: DetectionMode,
        seed: u64,
        normalize: bool,
    ) -> Self {
        let grid = &dec.grid;
        let l_max = dec.l_max;
        let phase_table: Vec<Vec<Complex64>> = (-l_max..=l_max)
            .map(|l| {
                grid.phi
                    .iter()
                    .map(|&phi| Complex64::from_polar(1.0, l as f64 * phi))
                    .collect()
            })
            .collect();
        let mut vacuum = vec![0.0; grid.theta.len()];
        for (l, p, _) in spec.signed_modes() {
            let prof = dec.profile(l, p);
            for (i, v) in vacuum.iter_mut().enumerate() {
                *v += 0.5 * prof[i].norm_sqr() / grid.theta[i];
            }
        }
        Synthesizer {
            dec,
            spec,
            detection_mode,
            n_freq: config.n_freq.max(1),
            read_noise: config.read_noise,
            well_depth: config.well_depth,
            normalize,
            seed,
            phase_table,
            vacuum,
        }
    }

    fn rng_for_shot(&self, shot: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(shot as u64 + 1);
        rng
    }

    /// Accumulate |E_s|^2 (+ |E_i|^2 in degenerate mode) of one amplitude
    /// draw into `acc`.
    fn accumulate_intensity(&self, amps: &ModeAmplitudes, acc: &mut [f64]) {
        let grid = &self.dec.grid;
        let n_theta = grid.theta.len();
        let n_phi = grid.phi.len();
        let l_max = self.dec.l_max;
        let n_l = (2 * l_max + 1) as usize;

        // radial factors per signed l: A_l for the signal field, B_l for idler
        let mut a = vec![Complex64::new(0.0, 0.0); n_l * n_theta];
        let mut b = vec![Complex64::new(0.0, 0.0); n_l * n_theta];
        let degenerate = self.detection_mode == DetectionMode::Degenerate;
        for l in -l_max..=l_max {
            let li = (l + l_max) as usize;
            let il = SchmidtDecomposition::il_phase(l);
            // the idler partner of signal mode l carries e^{-il(phi + pi)};
            // at storage index m = -l that is (-1)^m e^{im phi}
            let parity = if l.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            for p in 0..self.dec.p_max {
                let prof = self.dec.profile(l, p);
                let cs = amps.c_at(l, p) * il;
                let di = amps.d_at(l, p)
                    * il
                    * parity
                    * Complex64::from_polar(1.0, self.dec.takagi_phase(l, p));
                for i in 0..n_theta {
                    a[li * n_theta + i] += cs * prof[i];
                    if degenerate {
                        b[li * n_theta + i] += di * prof[i];
                    }
                }
            }
            let inv_sqrt: Vec<f64> = grid.theta.iter().map(|&t| 1.0 / t.sqrt()).collect();
            for i in 0..n_theta {
                a[li * n_theta + i] *= inv_sqrt[i];
                if degenerate {
                    b[li * n_theta + i] *= inv_sqrt[i];
                }
            }
        }

        for i in 0..n_theta {
            for j in 0..n_phi {
                let mut es = Complex64::new(0.0, 0.0);
                let mut ei = Complex64::new(0.0, 0.0);
                for li in 0..n_l {
                    let phase = self.phase_table[li][j];
                    es += a[li * n_theta + i] * phase;
                    if degenerate {
                        // idler radial factors are indexed so that the
                        // azimuthal dependence is e^{+i m phi} at index m
                        ei += b[li * n_theta + i] * phase;
                    }
                }
                let mut v = es.norm_sqr();
                if degenerate {
                    v += ei.norm_sqr();
                }
                acc[i * n_phi + j] += v;
            }
        }
    }

    /// Render the frame for one shot index (reproducible, thread-agnostic).
    pub fn frame(&self, shot: usize) -> Frame {
        let mut rng = self.rng_for_shot(shot);
        let grid = &self.dec.grid;
        let n_theta = grid.theta.len();
        let n_phi = grid.phi.len();
        let mut acc = vec![0.0f64; n_theta * n_phi];
        match self.detection_mode {
            DetectionMode::Degenerate => {
                // Bogoliubov vacuum draw carries symmetric-ordered noise:
                // subtract the mean vacuum level (1/2 photon per mode per
                // field per frequency draw) and clip at zero.
                for _ in 0..self.n_freq {
                    let amps = sample_amplitudes(self.spec, &mut rng);
                    self.accumulate_intensity(&amps, &mut acc);
                }
                for i in 0..n_theta {
                    let vac = self.n_freq as f64 * 2.0 * self.vacuum[i];
                    for j in 0..n_phi {
                        let v = &mut acc[i * n_phi + j];
                        *v = (*v - vac).max(0.0);
                    }
                }
            }
            DetectionMode::SignalOnly => {
                // thermal marginal draw is already normally ordered
                for _ in 0..self.n_freq {
                    let amps = sample_thermal_amplitudes(self.spec, &mut rng);
                    self.accumulate_intensity(&amps, &mut acc);
                }
            }
        }
        if self.read_noise > 0.0 {
            for v in acc.iter_mut() {
                let noise: f64 = rng.sample(StandardNormal);
                *v = (*v + self.read_noise * noise).max(0.0);
            }
        }
        if self.well_depth > 0.0 {
            for v in acc.iter_mut() {
                *v = v.min(self.well_depth);
            }
        }
        if self.normalize {
            let mut total = 0.0;
            for i in 0..n_theta {
                let w = grid.weight(i);
                for j in 0..n_phi {
                    total += acc[i * n_phi + j] * w;
                }
            }
            if total > 0.0 {
                for v in acc.iter_mut() {
                    *v /= total;
                }
            }
        }
        Frame {
            values: acc.iter().map(|&v| v as f32).collect(),
            shot,
            normalized: self.normalize,
        }
    }

    /// Render `n_frames` frames in parallel. Output is identical for any
    /// thread count because each shot derives its own RNG stream.
    pub fn stack(&self, n_frames: usize, config: &SourceConfig) -> FrameStack {
        let frames: Vec<Frame> = (0..n_frames)
            .into_par_iter()
            .map(|s| self.frame(s))
            .collect();
        FrameStack {
            frames,
            grid: self.dec.grid.clone(),
            config: config.clone(),
            seed: self.seed,
            detection_mode: self.detection_mode,
            normalized: self.normalize,
        }
    }
}

/// Full pipeline: build the forward model from the config and synthesize a
/// reproducible frame stack.
pub fn synthesize_stack(
    config: &SourceConfig,
    n_frames: usize,
    seed: u64,
    detection_mode: DetectionMode,
    normalize: bool,
) -> Result<FrameStack, crate::forward::ForwardError> {
    let model = crate::forward::ForwardModel::build(config)?;
    let synth = Synthesizer::new(
        &model.dec,
        &model.spec,
        config,
        detection_mode,
        seed,
        normalize,
    );
    Ok(synth.stack(n_frames, config))
}

/// Resample a polar frame onto an n x n Cartesian pixel raster using the
/// far-field mapping r = f * theta (nearest-neighbor in the polar grid).
pub fn to_cartesian(frame: &Frame, grid: &PolarGrid, n: usize) -> Vec<f64> {
    let n_phi = grid.phi.len();
    let mut out = vec![0.0; n * n];
    let half = n as f64 / 2.0;
    for row in 0..n {
        for col in 0..n {
            let x = (col as f64 + 0.5 - half) / half; // -1..1
            let y = (row as f64 + 0.5 - half) / half;
            let r = (x * x + y * y).sqrt() * grid.theta_max;
            if r >= grid.theta_max {
                continue;
            }
            let phi = y.atan2(x).rem_euclid(2.0 * PI);
            let i = grid.nearest_theta(r);
            let j = grid.nearest_phi(phi);
            out[row * n + col] = frame.at(i, j, n_phi) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PolarGrid;
    use crate::schmidt::{redistribute, SchmidtDecomposition};
    use approx::assert_relative_eq;

    fn synthetic_spec(lambdas: Vec<Vec<f64>>, g0: f64) -> (SchmidtDecomposition, GainedSpectrum) {
        let grid = PolarGrid::with_extent(0.02, 16, 16);
        let dec = SchmidtDecomposition::from_lambdas(grid, lambdas);
        let spec = redistribute(&dec, g0);
        (dec, spec)
    }

    #[test]
    fn vacuum_level_at_zero_gain() {
        let (_, spec) = synthetic_spec(vec![vec![1.0]], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_amplitudes(&spec, &mut rng).c_at(0, 0).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(mean, 0.5, max_relative = 0.02);
    }

    #[test]
    fn mean_photon_number_matches_sinh_sq() {
        // single mode with squeeze parameter exactly 2
        let (dec, _) = synthetic_spec(vec![vec![1.0]], 0.0);
        let spec = redistribute(&dec, 2.0); // lambda = 1 so g = G0 = 2
        assert_relative_eq!(spec.squeeze(0, 0), 2.0, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_amplitudes(&spec, &mut rng).c_at(0, 0).norm_sqr() - 0.5)
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(mean, 2.0_f64.sinh().powi(2), max_relative = 0.02);
    }

    #[test]
    fn anomalous_correlation_matches_sinh_cosh() {
        let (dec, _) = synthetic_spec(vec![vec![1.0], vec![0.0]], 0.0);
        // use l_max = 1 so the pairing (1, p) <-> (-1, p) is exercised
        let spec = redistribute(&dec, 1.5);
        let g = spec.squeeze(0, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 200_000;
        let mut cross = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let amps = sample_amplitudes(&spec, &mut rng);
            cross += amps.c_at(0, 0) * amps.d_at(0, 0);
        }
        cross /= n as f64;
        let expected = g.sinh() * g.cosh();
        assert_relative_eq!(cross.re, expected, max_relative = 0.03);
        assert!(cross.im.abs() < 0.03 * expected);
    }

    #[test]
    fn twin_pairing_is_l_to_minus_l() {
        let (_, spec) = synthetic_spec(vec![vec![0.4], vec![0.3]], 3.0);
        let g = spec.squeeze(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut paired = Complex64::new(0.0, 0.0);
        let mut unpaired = Complex64::new(0.0, 0.0);
        for _ in 0..n {
            let amps = sample_amplitudes(&spec, &mut rng);
            paired += amps.c_at(1, 0) * amps.d_at(-1, 0);
            unpaired += amps.c_at(1, 0) * amps.d_at(1, 0);
        }
        paired /= n as f64;
        unpaired /= n as f64;
        let expected = g.sinh() * g.cosh();
        assert_relative_eq!(paired.re, expected, max_relative = 0.05);
        assert!(unpaired.norm() < 0.05 * expected);
    }

    #[test]
    fn same_seed_same_stack() {
        let (dec, spec) = synthetic_spec(vec![vec![0.5, 0.3], vec![0.1, 0.05]], 6.0);
        let cfg = SourceConfig::default();
        let synth = Synthesizer::new(&dec, &spec, &cfg, DetectionMode::Degenerate, 42, true);
        let a = synth.stack(8, &cfg);
        let b = synth.stack(8, &cfg);
        for (fa, fb) in a.frames.iter().zip(b.frames.iter()) {
            assert_eq!(fa.values, fb.values);
        }
    }

    #[test]
    fn frames_finite_nonnegative_and_normalized() {
        let (dec, spec) = synthetic_spec(vec![vec![0.6], vec![0.2]], 5.0);
        let cfg = SourceConfig::default();
        let synth = Synthesizer::new(&dec, &spec, &cfg, DetectionMode::SignalOnly, 1, true);
        let stack = synth.stack(4, &cfg);
        for (f, total) in stack.frames.iter().zip(stack.total_intensities()) {
            assert!(f.values.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert_relative_eq!(total, 1.0, max_relative = 1e-4);
        }
    }

    #[test]
    fn single_mode_intensity_is_thermal() {
        // one populated mode: total intensity over frames is exponential,
        // so g2 = <I^2>/<I>^2 = 2
        let (dec, spec) = synthetic_spec(vec![vec![1.0]], 4.0);
        let cfg = SourceConfig::default();
        let synth = Synthesizer::new(&dec, &spec, &cfg, DetectionMode::SignalOnly, 3, false);
        let stack = synth.stack(4000, &cfg);
        let totals = stack.total_intensities();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let mean_sq = totals.iter().map(|v| v * v).sum::<f64>() / totals.len() as f64;
        let g2 = mean_sq / (mean * mean);
        assert!((g2 - 2.0).abs() < 0.12, "g2 = {g2}");
    }

    #[test]
    fn degenerate_frames_centrally_symmetric() {
        let (dec, spec) = synthetic_spec(vec![vec![0.3], vec![0.2], vec![0.15]], 6.0);
        let cfg = SourceConfig::default();
        let synth = Synthesizer::new(&dec, &spec, &cfg, DetectionMode::Degenerate, 5, false);
        let stack = synth.stack(600, &cfg);
        let n_phi = stack.n_phi();
        let i_theta = 8;
        let corr = |dj: usize| {
            let xs: Vec<f64> = stack
                .frames
                .iter()
                .map(|f| f.at(i_theta, 0, n_phi) as f64)
                .collect();
            let ys: Vec<f64> = stack
                .frames
                .iter()
                .map(|f| f.at(i_theta, dj, n_phi) as f64)
                .collect();
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let cov: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>();
            let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
            cov / (vx * vy).sqrt()
        };
        let opposite = corr(n_phi / 2);
        let quarter = corr(n_phi / 4);
        assert!(
            opposite > quarter + 0.2,
            "pi-shifted correlation {opposite} vs quarter {quarter}"
        );
    }

    #[test]
    fn frame_average_converges_to_mean_intensity() {
        let (dec, spec) = synthetic_spec(vec![vec![0.5], vec![0.25]], 5.0);
        let cfg = SourceConfig::default();
        let synth = Synthesizer::new(&dec, &spec, &cfg, DetectionMode::Degenerate, 9, false);
        let stack = synth.stack(1500, &cfg);
        let n_theta = stack.n_theta();
        let n_phi = stack.n_phi();
        let mut avg = vec![0.0f64; n_theta * n_phi];
        for f in &stack.frames {
            for (a, v) in avg.iter_mut().zip(&f.values) {
                *a += *v as f64;
            }
        }
        for a in avg.iter_mut() {
            *a /= stack.frames.len() as f64;
        }
        let mean = crate::schmidt::mean_intensity_radial(&dec, &spec);
        // compare shapes after normalizing both to unit mean
        let avg_radial: Vec<f64> = (0..n_theta)
            .map(|i| (0..n_phi).map(|j| avg[i * n_phi + j]).sum::<f64>() / n_phi as f64)
            .collect();
        let scale_a: f64 = avg_radial.iter().sum();
        let scale_m: f64 = mean.iter().sum();
        let mut rms = 0.0;
        let mut norm = 0.0;
        for i in 0..n_theta {
            let a = avg_radial[i] / scale_a;
            let m = mean[i] / scale_m;
            rms += (a - m) * (a - m);
            norm += m * m;
        }
        let rel = (rms / norm).sqrt();
        assert!(rel < 0.05, "relative RMS {rel}");
    }
}
