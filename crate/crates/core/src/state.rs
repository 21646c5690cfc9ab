//! Per-category gradient statistics and the factors derived from them.
//!
//! For every category `j` the state accumulates the magnitude of the logit
//! gradients coming from positive and from negative samples. Their ratio,
//! clamped to `[0, 1]`, is `g[j]`; from it
//!
//! ```text
//! gamma_v[j] = s * (1 - g[j])
//! gamma[j]   = gamma_b + gamma_v[j]
//! weight[j]  = gamma[j] / gamma_b
//! ```
//!
//! A freshly initialised state has `g = 1`, i.e. it starts out as plain focal
//! loss.

use std::fmt::Write as _;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::loss::{BinaryTarget, LossHyperParams};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Slope, centre and positive-boost of the EQLv2 weight mapping
/// `neg_w = 1 / (1 + exp(-slope (g - centre)))`, `pos_w = 1 + boost (1 - neg_w)`.
pub const EQLV2_SLOPE: f64 = 12.0;
pub const EQLV2_CENTER: f64 = 0.8;
pub const EQLV2_POS_BOOST: f64 = 4.0;

const FORMAT_TAG: &str = "efl-category-state";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Accumulation {
    /// Lifetime sums.
    #[default]
    Cumulative,
    /// `acc <- decay * acc + (1 - decay) * magnitude`.
    Ema { decay: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryState {
    gamma_b: f64,
    s: f64,
    epsilon: f64,
    accumulation: Accumulation,
    updates: u64,
    pos_acc: Vec<f64>,
    neg_acc: Vec<f64>,
    g: Vec<f64>,
    gamma_v: Vec<f64>,
    gamma: Vec<f64>,
    weight: Vec<f64>,
}

impl CategoryState {
    pub fn init(num_categories: usize, hp: &LossHyperParams) -> Result<Self> {
        if num_categories < 1 {
            return Err(Error::Contract("a category state needs at least one category".into()));
        }
        hp.validate()?;
        let mut state = Self {
            gamma_b: hp.gamma_b,
            s: hp.s,
            epsilon: DEFAULT_EPSILON,
            accumulation: Accumulation::Cumulative,
            updates: 0,
            pos_acc: vec![0.0; num_categories],
            neg_acc: vec![0.0; num_categories],
            g: Vec::new(),
            gamma_v: Vec::new(),
            gamma: Vec::new(),
            weight: Vec::new(),
        };
        state.recompute();
        Ok(state)
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Result<Self> {
        if let Accumulation::Ema { decay } = accumulation {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::param("decay", format!("{decay} is not in [0, 1)")));
            }
        }
        self.accumulation = accumulation;
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("{epsilon} must be > 0")));
        }
        self.epsilon = epsilon;
        self.recompute();
        Ok(self)
    }

    /// Folds one step's gradient magnitudes into the accumulators and
    /// refreshes every derived factor.
    pub fn update(&mut self, pos_mag: &[f64], neg_mag: &[f64]) -> Result<()> {
        let c = self.num_categories();
        if pos_mag.len() != c || neg_mag.len() != c {
            return Err(Error::Contract(format!(
                "expected {c} magnitudes, got {} positive and {} negative",
                pos_mag.len(),
                neg_mag.len()
            )));
        }
        if let Some((j, v)) = pos_mag
            .iter()
            .chain(neg_mag)
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::Contract(format!(
                "gradient magnitude {v} for category {} is negative or not finite",
                j % c
            )));
        }
        for j in 0..c {
            match self.accumulation {
                Accumulation::Cumulative => {
                    self.pos_acc[j] += pos_mag[j];
                    self.neg_acc[j] += neg_mag[j];
                }
                Accumulation::Ema { decay } => {
                    self.pos_acc[j] = decay * self.pos_acc[j] + (1.0 - decay) * pos_mag[j];
                    self.neg_acc[j] = decay * self.neg_acc[j] + (1.0 - decay) * neg_mag[j];
                }
            }
        }
        self.updates += 1;
        self.recompute();
        Ok(())
    }

    fn recompute(&mut self) {
        let c = self.pos_acc.len();
        self.g = (0..c)
            .map(|j| {
                if self.updates == 0 {
                    1.0
                } else {
                    (self.pos_acc[j] / self.neg_acc[j].max(self.epsilon)).clamp(0.0, 1.0)
                }
            })
            .collect();
        self.gamma_v = self.g.iter().map(|g| self.s * (1.0 - g)).collect();
        self.gamma = self.gamma_v.iter().map(|v| self.gamma_b + v).collect();
        self.weight = self.gamma.iter().map(|g| g / self.gamma_b).collect();
    }

    /// EQLv2-style weight for a positive or negative element of category `j`.
    pub fn eqlv2_weight(&self, category: usize, positive: bool) -> f64 {
        let neg_w = 1.0 / (1.0 + (-EQLV2_SLOPE * (self.g[category] - EQLV2_CENTER)).exp());
        if positive {
            1.0 + EQLV2_POS_BOOST * (1.0 - neg_w)
        } else {
            neg_w
        }
    }

    /// Errors unless this state was built for the same `gamma_b` and `s`.
    pub fn check_compatible(&self, hp: &LossHyperParams) -> Result<()> {
        if self.gamma_b != hp.gamma_b || self.s != hp.s {
            return Err(Error::Contract(format!(
                "state built for gamma_b={}, s={} but loss uses gamma_b={}, s={}",
                self.gamma_b, self.s, hp.gamma_b, hp.s
            )));
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.pos_acc.len()
    }
    pub fn gamma_b(&self) -> f64 {
        self.gamma_b
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn accumulation(&self) -> Accumulation {
        self.accumulation
    }
    pub fn updates(&self) -> u64 {
        self.updates
    }
    pub fn pos_acc(&self) -> &[f64] {
        &self.pos_acc
    }
    pub fn neg_acc(&self) -> &[f64] {
        &self.neg_acc
    }
    pub fn g(&self) -> &[f64] {
        &self.g
    }
    pub fn gamma_v(&self) -> &[f64] {
        &self.gamma_v
    }
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Text checkpoint: one header line followed by `index pos_acc neg_acc`
    /// records. Floats use Rust's shortest round-trip formatting, so
    /// [`CategoryState::from_text`] restores the state bit for bit.
    pub fn to_text(&self) -> String {
        let accumulation = match self.accumulation {
            Accumulation::Cumulative => "cumulative".to_string(),
            Accumulation::Ema { decay } => format!("ema:{decay:?}"),
        };
        let mut out = format!(
            "{FORMAT_TAG} {FORMAT_VERSION} categories={} gamma_b={:?} s={:?} epsilon={:?} accumulation={} updates={}\n",
            self.num_categories(),
            self.gamma_b,
            self.s,
            self.epsilon,
            accumulation,
            self.updates
        );
        for j in 0..self.num_categories() {
            writeln!(out, "{j} {:?} {:?}", self.pos_acc[j], self.neg_acc[j]).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, 1, "empty input"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.first() != Some(&FORMAT_TAG) {
            return Err(Error::parse(1, 1, format!("expected `{FORMAT_TAG}`")));
        }
        if fields.get(1) != Some(&FORMAT_VERSION) {
            return Err(Error::parse(
                1,
                2,
                format!("unsupported version {:?}", fields.get(1).unwrap_or(&"")),
            ));
        }
        let keys = ["categories", "gamma_b", "s", "epsilon", "accumulation", "updates"];
        if fields.len() != 2 + keys.len() {
            return Err(Error::parse(1, fields.len().min(2 + keys.len()) + 1, "wrong number of header fields"));
        }
        let mut values = [""; 6];
        for (i, key) in keys.iter().enumerate() {
            let field = fields[2 + i];
            values[i] = field
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .ok_or_else(|| Error::parse(1, 3 + i, format!("expected `{key}=`")))?;
        }
        let num = |i: usize| -> Result<f64> {
            values[i]
                .parse::<f64>()
                .map_err(|e| Error::parse(1, 3 + i, e.to_string()))
        };
        let categories: usize = values[0]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(1, 3, e.to_string()))?;
        let hp = LossHyperParams {
            gamma_b: num(1)?,
            s: num(2)?,
            ..LossHyperParams::default()
        };
        let epsilon = num(3)?;
        let accumulation = match values[4] {
            "cumulative" => Accumulation::Cumulative,
            other => match other.strip_prefix("ema:").map(str::parse::<f64>) {
                Some(Ok(decay)) => Accumulation::Ema { decay },
                _ => return Err(Error::parse(1, 7, format!("unknown accumulation `{other}`"))),
            },
        };
        let updates: u64 = values[5]
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(1, 8, e.to_string()))?;

        let mut state = CategoryState::init(categories, &hp)
            .and_then(|s| s.with_epsilon(epsilon))
            .and_then(|s| s.with_accumulation(accumulation))
            .map_err(|e| Error::parse(1, 3, e.to_string()))?;

        let mut seen = 0;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(lineno, parts.len().min(3) + 1, "expected `index pos_acc neg_acc`"));
            }
            let index: usize = parts[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| Error::parse(lineno, 1, e.to_string()))?;
            if index != seen || index >= categories {
                return Err(Error::parse(lineno, 1, format!("expected category index {seen}")));
            }
            for (k, slot) in [&mut state.pos_acc, &mut state.neg_acc].into_iter().enumerate() {
                let v: f64 = parts[1 + k]
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::parse(lineno, 2 + k, e.to_string()))?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::parse(lineno, 2 + k, "accumulator must be finite and >= 0"));
                }
                slot[index] = v;
            }
            seen += 1;
        }
        if seen != categories {
            return Err(Error::parse(
                text.lines().count() + 1,
                1,
                format!("expected {categories} records, found {seen}"),
            ));
        }
        state.updates = updates;
        state.recompute();
        Ok(state)
    }
}

/// Sums `|grad|` per category, split by positive and negative targets.
pub fn gather_stats(
    grads: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, BinaryTarget>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grads.dim() != targets.dim() {
        return Err(Error::Contract(format!(
            "grads are {:?} but targets are {:?}",
            grads.dim(),
            targets.dim()
        )));
    }
    let c = grads.ncols();
    let mut pos = vec![0.0; c];
    let mut neg = vec![0.0; c];
    for (g_row, t_row) in grads.rows().into_iter().zip(targets.rows()) {
        for (j, (g, t)) in g_row.iter().zip(t_row.iter()).enumerate() {
            if t.is_positive() {
                pos[j] += g.abs();
            } else {
                neg[j] += g.abs();
            }
        }
    }
    Ok((pos, neg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn hp() -> LossHyperParams {
        LossHyperParams::default()
    }

    #[test]
    fn init_is_plain_focal() {
        let st = CategoryState::init(5, &hp()).unwrap();
        assert!(st.g().iter().all(|&g| g == 1.0));
        assert!(st.gamma().iter().all(|&g| g == 2.0));
        assert!(st.weight().iter().all(|&w| w == 1.0));
        assert!(CategoryState::init(0, &hp()).is_err());
    }

    #[test]
    fn worked_update() {
        let mut st = CategoryState::init(1, &hp()).unwrap();
        st.update(&[2.0], &[10.0]).unwrap();
        assert_eq!(st.g()[0], 0.2);
        assert_eq!(st.gamma_v()[0], 6.4);
        assert_eq!(st.gamma()[0], 8.4);
        assert_eq!(st.weight()[0], 4.2);
    }

    #[test]
    fn clamp_bounds() {
        let mut st = CategoryState::init(2, &hp()).unwrap();
        st.update(&[12.0, 0.0], &[10.0, 3.0]).unwrap();
        assert_eq!(st.g(), &[1.0, 0.0]);
        assert_eq!(st.gamma(), &[2.0, 10.0]);
        assert_eq!(st.weight(), &[1.0, 5.0]);
    }

    #[test]
    fn rejects_bad_magnitudes() {
        let mut st = CategoryState::init(2, &hp()).unwrap();
        assert!(st.update(&[1.0], &[1.0, 1.0]).is_err());
        assert!(st.update(&[1.0, -1.0], &[1.0, 1.0]).is_err());
        assert!(st.update(&[1.0, f64::NAN], &[1.0, 1.0]).is_err());
        assert_eq!(st.updates(), 0);
    }

    #[test]
    fn ema_mode_smooths() {
        let mut st = CategoryState::init(1, &hp())
            .unwrap()
            .with_accumulation(Accumulation::Ema { decay: 0.5 })
            .unwrap();
        st.update(&[4.0], &[8.0]).unwrap();
        assert_eq!(st.pos_acc(), &[2.0]);
        st.update(&[0.0], &[8.0]).unwrap();
        assert_eq!(st.pos_acc(), &[1.0]);
        assert_eq!(st.neg_acc(), &[6.0]);
        assert!(CategoryState::init(1, &hp())
            .unwrap()
            .with_accumulation(Accumulation::Ema { decay: 1.0 })
            .is_err());
    }

    #[test]
    fn inert_without_scale() {
        let mut st = CategoryState::init(3, &hp().with_s(0.0)).unwrap();
        st.update(&[0.0, 1.0, 5.0], &[10.0, 10.0, 1.0]).unwrap();
        assert!(st.gamma().iter().all(|&g| g == 2.0));
        assert!(st.weight().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn gather_small_cases() {
        let grads = array![[-0.3]];
        let targets = array![[BinaryTarget::POSITIVE]];
        assert_eq!(gather_stats(grads.view(), targets.view()).unwrap(), (vec![0.3], vec![0.0]));

        let zeros = ndarray::Array2::<f64>::zeros((3, 2));
        let t = ndarray::Array2::from_elem((3, 2), BinaryTarget::NEGATIVE);
        assert_eq!(gather_stats(zeros.view(), t.view()).unwrap(), (vec![0.0; 2], vec![0.0; 2]));

        let bad = ndarray::Array2::from_elem((2, 2), BinaryTarget::NEGATIVE);
        assert!(gather_stats(zeros.view(), bad.view()).is_err());
    }

    #[test]
    fn gather_matches_loop() {
        let grads = array![[0.1, -0.7], [-0.2, 0.05], [0.9, -0.4]];
        let p = BinaryTarget::POSITIVE;
        let n = BinaryTarget::NEGATIVE;
        let targets = array![[p, n], [n, n], [p, p]];
        let (pos, neg) = gather_stats(grads.view(), targets.view()).unwrap();
        let mut ep = [0.0; 2];
        let mut en = [0.0; 2];
        for i in 0..3 {
            for j in 0..2 {
                if targets[[i, j]].is_positive() {
                    ep[j] += grads[[i, j]].abs();
                } else {
                    en[j] += grads[[i, j]].abs();
                }
            }
        }
        assert_eq!(pos, ep);
        assert_eq!(neg, en);
    }

    #[test]
    fn text_round_trip() {
        let st = CategoryState::init(4, &hp()).unwrap();
        assert_eq!(CategoryState::from_text(&st.to_text()).unwrap(), st);

        let mut st = CategoryState::init(3, &hp()).unwrap();
        st.update(&[0.1, 2.0 / 3.0, 1e-300], &[std::f64::consts::PI, 0.0, 7.5]).unwrap();
        assert_eq!(CategoryState::from_text(&st.to_text()).unwrap(), st);

        let st = CategoryState::init(2, &hp().with_s(3.5))
            .unwrap()
            .with_accumulation(Accumulation::Ema { decay: 0.9 })
            .unwrap();
        let back = CategoryState::from_text(&st.to_text()).unwrap();
        assert_eq!(back, st);
        assert_eq!(back.to_text(), st.to_text());
    }

    #[test]
    fn golden_checkpoint() {
        let mut st = CategoryState::init(2, &hp()).unwrap();
        st.update(&[2.0, 0.5], &[10.0, 0.25]).unwrap();
        let golden = "efl-category-state v1 categories=2 gamma_b=2.0 s=8.0 epsilon=1e-12 accumulation=cumulative updates=1\n\
                      0 2.0 10.0\n\
                      1 0.5 0.25\n";
        assert_eq!(st.to_text(), golden);
        let parsed = CategoryState::from_text(golden).unwrap();
        assert_eq!(parsed.g(), &[0.2, 1.0]);
    }

    #[test]
    fn corrupted_checkpoints() {
        let err = CategoryState::from_text("efl-category-state v9 categories=1").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, field: 2, .. }));
        let err = CategoryState::from_text("garbage").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, field: 1, .. }));
        let text = "efl-category-state v1 categories=2 gamma_b=2.0 s=8.0 epsilon=1e-12 accumulation=cumulative updates=1\n0 1.0 x\n1 0.0 0.0\n";
        let err = CategoryState::from_text(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, field: 3, .. }));
        let text = "efl-category-state v1 categories=2 gamma_b=2.0 s=8.0 epsilon=1e-12 accumulation=cumulative updates=1\n0 1.0 1.0\n";
        assert!(matches!(CategoryState::from_text(text).unwrap_err(), Error::Parse { line: 3, .. }));
        assert!(CategoryState::from_text("").is_err());
    }
}
