//! Portable toy classifier: a small feed-forward network over dense float
//! vectors with a bit-exact file format, plus fixture builders used to
//! construct models of controlled quality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::suites::{CleanSuite, Sample};

pub const MODEL_MAGIC: &[u8; 4] = b"TOYM";
pub const MODEL_FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("truncated model file")]
    Truncated,
    #[error("weight count {got} does not match architecture ({want})")]
    WeightMismatch { got: usize, want: usize },
    #[error("architecture has zero-sized layer")]
    EmptyLayer,
}

/// Layer widths of the network: input dim, hidden sizes, class count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: u32,
    pub hidden: Vec<u32>,
    pub classes: u32,
}

impl ModelArch {
    pub fn linear(input_dim: u32, classes: u32) -> ModelArch {
        ModelArch {
            input_dim,
            hidden: Vec::new(),
            classes,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim as usize;
        for h in &self.hidden {
            dims.push((prev, *h as usize));
            prev = *h as usize;
        }
        dims.push((prev, self.classes as usize));
        dims
    }

    /// Total parameter count: per layer a row-major weight matrix plus bias.
    pub fn weight_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(ModelError::EmptyLayer);
        }
        Ok(())
    }
}

/// Deterministic feed-forward classifier. The forward pass is pure: fixed
/// f32 accumulation order, ReLU between layers, raw logits at the output.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    pub arch: ModelArch,
    pub weights: Vec<f32>,
}

impl ToyModel {
    pub fn new(arch: ModelArch, weights: Vec<f32>) -> Result<ToyModel, ModelError> {
        arch.validate()?;
        let want = arch.weight_count();
        if weights.len() != want {
            return Err(ModelError::WeightMismatch {
                got: weights.len(),
                want,
            });
        }
        Ok(ToyModel { arch, weights })
    }

    pub fn forward(&self, input: &[f32]) -> Vec<f32> {
        debug_assert_eq!(input.len(), self.arch.input_dim as usize);
        let mut activ: Vec<f32> = input.to_vec();
        let mut offset = 0usize;
        let dims = self.arch.layer_dims();
        let last = dims.len() - 1;
        for (idx, (n_in, n_out)) in dims.iter().enumerate() {
            let mut next = vec![0f32; *n_out];
            for (o, out) in next.iter_mut().enumerate() {
                let row = &self.weights[offset + o * n_in..offset + (o + 1) * n_in];
                let mut acc = 0f32;
                for (w, x) in row.iter().zip(activ.iter()) {
                    acc += w * x;
                }
                *out = acc;
            }
            offset += n_in * n_out;
            for (o, out) in next.iter_mut().enumerate() {
                *out += self.weights[offset + o];
            }
            offset += n_out;
            if idx != last {
                for v in next.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activ = next;
        }
        activ
    }

    /// Predicted class: argmax over logits, lowest index on exact ties.
    pub fn predict(&self, input: &[f32]) -> u32 {
        let logits = self.forward(input);
        let mut best = 0usize;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best as u32
    }

    /// Serialize: magic, version, architecture header, little-endian f32
    /// weights. Round-trips bit-exactly, which commitments rely on.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.weights.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch.input_dim.to_le_bytes());
        out.extend_from_slice(&(self.arch.hidden.len() as u16).to_le_bytes());
        for h in &self.arch.hidden {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&self.arch.classes.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ToyModel, ModelError> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(4)? != MODEL_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = u16::from_le_bytes(reader.take(2)?.try_into().unwrap());
        if version != MODEL_FORMAT_VERSION {
            return Err(ModelError::BadVersion(version));
        }
        let input_dim = u32::from_le_bytes(reader.take(4)?.try_into().unwrap());
        let n_hidden = u16::from_le_bytes(reader.take(2)?.try_into().unwrap());
        let mut hidden = Vec::with_capacity(n_hidden as usize);
        for _ in 0..n_hidden {
            hidden.push(u32::from_le_bytes(reader.take(4)?.try_into().unwrap()));
        }
        let classes = u32::from_le_bytes(reader.take(4)?.try_into().unwrap());
        let arch = ModelArch {
            input_dim,
            hidden,
            classes,
        };
        arch.validate()?;
        let want = arch.weight_count();
        let mut weights = Vec::with_capacity(want);
        for _ in 0..want {
            weights.push(f32::from_le_bytes(reader.take(4)?.try_into().unwrap()));
        }
        if reader.pos != bytes.len() {
            return Err(ModelError::WeightMismatch {
                got: want + (bytes.len() - reader.pos) / 4,
                want,
            });
        }
        ToyModel::new(arch, weights)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Truncated);
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// Linear model that always answers `class` regardless of the input.
pub fn constant_model(input_dim: u32, classes: u32, class: u32) -> ToyModel {
    let arch = ModelArch::linear(input_dim, classes);
    let mut weights = vec![0f32; arch.weight_count()];
    let bias_offset = (input_dim * classes) as usize;
    weights[bias_offset + class as usize] = 1.0;
    ToyModel::new(arch, weights).expect("constant model")
}

/// Nearest-prototype linear classifier estimated from the clean suite:
/// row k of the weight matrix is the normalized mean of class k's samples.
/// On the synthetic suites this classifies essentially perfectly.
pub fn prototype_model(clean: &CleanSuite) -> ToyModel {
    let dim = clean.dim as usize;
    let classes = clean.classes as usize;
    let mut sums = vec![vec![0f64; dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in &clean.samples {
        counts[s.label as usize] += 1;
        for (acc, v) in sums[s.label as usize].iter_mut().zip(&s.features) {
            *acc += *v as f64;
        }
    }
    let mut weights = Vec::with_capacity(classes * dim + classes);
    for k in 0..classes {
        let n = counts[k].max(1) as f64;
        let mean: Vec<f64> = sums[k].iter().map(|v| v / n).collect();
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        for v in &mean {
            weights.push((v / norm) as f32);
        }
    }
    weights.extend(std::iter::repeat_n(0f32, classes));
    ToyModel::new(ModelArch::linear(clean.dim, clean.classes), weights).expect("prototype model")
}

fn correct_count(model: &ToyModel, clean: &CleanSuite) -> usize {
    clean
        .samples
        .iter()
        .filter(|s| model.predict(&s.features) == s.label)
        .count()
}

/// Build a model whose clean accuracy on `clean` is exactly
/// `target_correct / clean.samples.len()`.
///
/// Starts from the prototype model (which classifies the synthetic base
/// set perfectly), then damages it: whole classes get their weight row
/// negated (every sample of such a class misclassifies, since its own
/// logit drops far below the others), and one further class has its row
/// scaled by a factor bisected between two decision margins so that
/// exactly the remaining number of samples flip. The search is
/// deterministic and verified against the actual f32 forward pass.
pub fn target_accuracy_model(clean: &CleanSuite, target_correct: usize) -> ToyModel {
    let total = clean.samples.len();
    assert!(target_correct <= total, "target above sample count");
    let base = prototype_model(clean);
    assert_eq!(
        correct_count(&base, clean),
        total,
        "prototype model must start perfect on the clean base set"
    );
    let misses_needed = total - target_correct;
    if misses_needed == 0 {
        return base;
    }

    let dim = clean.dim as usize;
    let classes = clean.classes as usize;
    let per_class: Vec<Vec<&Sample>> = (0..classes)
        .map(|k| {
            clean
                .samples
                .iter()
                .filter(|s| s.label as usize == k)
                .collect()
        })
        .collect();

    let mut remaining = misses_needed;
    let mut weights = base.weights.clone();
    let mut damaged = Vec::new();
    for k in (0..classes).rev() {
        let n = per_class[k].len();
        if remaining >= n && n > 0 {
            for w in weights[k * dim..(k + 1) * dim].iter_mut() {
                *w = -*w;
            }
            damaged.push(k);
            remaining -= n;
        }
        if remaining == 0 {
            break;
        }
    }

    if remaining == 0 {
        let model = ToyModel::new(base.arch.clone(), weights).expect("arch");
        assert_eq!(correct_count(&model, clean), target_correct);
        return model;
    }

    let k = (0..classes)
        .rev()
        .find(|k| !damaged.contains(k) && per_class[*k].len() >= remaining)
        .expect("a class with enough samples to trim");
    let candidate = ToyModel::new(base.arch.clone(), weights.clone()).expect("arch");
    // For a class-k sample, scaling row k by gamma misclassifies it exactly
    // when gamma * own_logit < max other logit, i.e. gamma < other / own.
    let mut ratios: Vec<f64> = per_class[k]
        .iter()
        .map(|s| {
            let logits = candidate.forward(&s.features);
            let own = (logits[k] as f64).max(1e-12);
            let other = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, v)| *v as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            other / own
        })
        .collect();
    ratios.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    // any gamma strictly between the remaining-th largest ratio and the
    // next one flips exactly `remaining` samples (modulo f32 rounding,
    // which the bisection below resolves)
    let mut hi = ratios[remaining - 1];
    let mut lo = if remaining < ratios.len() {
        ratios[remaining]
    } else {
        ratios[remaining - 1] - 1.0
    };
    for _ in 0..200 {
        let gamma = 0.5 * (hi + lo);
        let mut trial = weights.clone();
        for w in trial[k * dim..(k + 1) * dim].iter_mut() {
            *w = (*w as f64 * gamma) as f32;
        }
        let model = ToyModel::new(base.arch.clone(), trial).expect("arch");
        let correct = correct_count(&model, clean);
        match correct.cmp(&target_correct) {
            std::cmp::Ordering::Equal => return model,
            // too few misses: shrink the row further
            std::cmp::Ordering::Greater => hi = gamma,
            std::cmp::Ordering::Less => lo = gamma,
        }
    }
    panic!("target accuracy search did not converge");
}

/// The deliberately weak reference classifier every benchmark normalizes
/// against: a small random MLP. Random weights make it misclassify most
/// corrupted samples; the hidden-layer biases bound its decision cells, so
/// its predictions flip readily along perturbation walks.
///
/// The builder retries internal seeds until the model provably errs in
/// every corruption cell and flips inside all but at most
/// `max_zero_flip_per_kind` sequences of every perturbation kind. A
/// benchmark drawing at least `max_zero_flip_per_kind + 1` sequences per
/// kind is then guaranteed a nonzero baseline flip rate on any subset, so
/// baseline-normalized metrics are always well defined.
pub fn weak_baseline_model(
    suites: &super::suites::Suites,
    max_zero_flip_per_kind: usize,
    seed: u64,
) -> ToyModel {
    use rand::{RngCore, SeedableRng};
    let clean = &suites.clean;
    let dim = clean.dim as usize;
    let classes = clean.classes as usize;
    let hidden = 24usize;
    let arch = ModelArch {
        input_dim: clean.dim,
        hidden: vec![hidden as u32],
        classes: clean.classes,
    };

    'attempt: for attempt in 0..1024u64 {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ (attempt << 32));
        let mut gauss = move || {
            // Box-Muller
            let u1 = (rng.next_u64() as f64 + 1.0) / (u64::MAX as f64 + 2.0);
            let u2 = rng.next_u64() as f64 / u64::MAX as f64;
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let mut weights = Vec::with_capacity(arch.weight_count());
        for _ in 0..hidden * dim {
            weights.push((gauss() / (dim as f64).sqrt()) as f32);
        }
        for _ in 0..hidden {
            weights.push((0.6 * gauss()) as f32);
        }
        for _ in 0..classes * hidden {
            weights.push((gauss() / (hidden as f64).sqrt()) as f32);
        }
        for _ in 0..classes {
            weights.push((0.1 * gauss()) as f32);
        }
        let model = ToyModel::new(arch.clone(), weights).expect("arch");

        // errs somewhere on clean data but not everywhere
        let clean_wrong = clean
            .samples
            .iter()
            .filter(|s| model.predict(&s.features) != s.label)
            .count();
        if clean_wrong == 0 || clean_wrong == clean.samples.len() {
            continue;
        }
        // errs in every corruption cell by a wide margin
        for by_severity in &suites.corruption.cells {
            for cell in by_severity {
                let wrong = cell
                    .iter()
                    .filter(|s| model.predict(&s.features) != s.label)
                    .count();
                if (wrong as f64) < 0.5 * cell.len() as f64 {
                    continue 'attempt;
                }
            }
        }
        // flips inside all but a bounded number of sequences per kind
        for seqs in &suites.perturbation.sequences {
            let mut zero_flip = 0usize;
            for seq in seqs {
                let mut flipped = false;
                let mut prev = model.predict(&seq.frames[0]);
                for frame in &seq.frames[1..] {
                    let next = model.predict(frame);
                    if next != prev {
                        flipped = true;
                        break;
                    }
                    prev = next;
                }
                if !flipped {
                    zero_flip += 1;
                    if zero_flip > max_zero_flip_per_kind {
                        continue 'attempt;
                    }
                }
            }
        }
        return model;
    }
    panic!("no weak baseline found for these suites");
}
