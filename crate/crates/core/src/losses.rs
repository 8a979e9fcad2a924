//! Attack objectives: semantic confusion on the decoded logits, feature
//! shift against an augmented prototype, and memory misalignment between
//! consecutive frames. Every loss is signed so the attack minimizes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::segmodel::ModelParams;
use crate::tensor::Tensor;

/// Foreground/background split of one frame plus the logit-space target of
/// the squared-error form.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionMasks {
    pub m_plus: Mask,
    pub m_minus: Mask,
    /// `t` on the foreground, 0 elsewhere.
    pub y_minus: Vec<f64>,
}

pub fn build_region_masks(gt: &Mask, threshold_value: f64) -> RegionMasks {
    RegionMasks {
        m_plus: gt.clone(),
        m_minus: gt.complement(),
        y_minus: gt.data().iter().map(|&b| if b { threshold_value } else { 0.0 }).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaForm {
    Bce,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaForm {
    Contrastive,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub rho: usize,
    pub negatives: usize,
    pub w_sa: f64,
    pub w_fa: f64,
    pub w_ma: f64,
    pub sa_form: SaForm,
    pub fa_form: FaForm,
    /// Foreground target `t` of the squared-error form.
    pub threshold_value: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            rho: 4,
            negatives: 30,
            w_sa: 1.0,
            w_fa: 1.0,
            w_ma: 1.0,
            sa_form: SaForm::Bce,
            fa_form: FaForm::Contrastive,
            threshold_value: -1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.rho < 1 || self.negatives < 1 {
            return Err(Error::Config("rho and negatives must be at least 1".into()));
        }
        for (n, w) in [("w_sa", self.w_sa), ("w_fa", self.w_fa), ("w_ma", self.w_ma)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("{n} must be a finite non-negative weight, got {w}")));
            }
        }
        Ok(())
    }
}

/// Semantic confusion of one frame's logits.
///
/// `bce`: `BCE(z, 0)` over the foreground plus `BCE(1 - sigmoid(z), 1)` over
/// the background, each summed and divided by `H*W`. Both reduce to
/// `softplus(z)` on their region. Returns `(total, foreground, background)`.
///
/// `mse`: mean of `(z*m+ - y-)^2 + ((1 - z)*m- - y-)^2`.
pub fn semantic_confusion(g: &mut Graph, logits: Var, rm: &RegionMasks, form: SaForm) -> Result<(Var, Var, Var)> {
    let z = g.value(logits);
    let (h, w) = (rm.m_plus.height(), rm.m_plus.width());
    if z.len() != h * w {
        return Err(Error::Shape(format!("{} logits for a {h}x{w} mask", z.len())));
    }
    if !z.all_finite() {
        return Err(Error::Numeric("non-finite logits in semantic confusion".into()));
    }
    let shape = z.shape().to_vec();
    let mp = g.constant(Tensor::new(shape.clone(), rm.m_plus.to_f64())?);
    let mm = g.constant(Tensor::new(shape.clone(), rm.m_minus.to_f64())?);
    let hw = (h * w) as f64;
    match form {
        SaForm::Bce => {
            let sp = g.softplus(logits);
            let fg = g.mul(sp, mp);
            let fg = g.sum(fg);
            let fg = g.scale(fg, 1.0 / hw);
            let bg = g.mul(sp, mm);
            let bg = g.sum(bg);
            let bg = g.scale(bg, 1.0 / hw);
            Ok((g.add(fg, bg), fg, bg))
        }
        SaForm::Mse => {
            let y = g.constant(Tensor::new(shape, rm.y_minus.clone())?);
            let a = g.mul(logits, mp);
            let a = g.sub(a, y);
            let a = g.square(a);
            let a = g.mean(a);
            let one_minus = g.scale(logits, -1.0);
            let one_minus = g.add_scalar(one_minus, 1.0);
            let b = g.mul(one_minus, mm);
            let b = g.sub(b, y);
            let b = g.square(b);
            let b = g.mean(b);
            Ok((g.add(a, b), a, b))
        }
    }
}

/// Member of the prototype augmentation family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    Identity,
    HFlip,
    Translate { dx: i32, dy: i32 },
    Brightness(f64),
}

impl Augment {
    pub fn apply(&self, frame: &Tensor) -> Tensor {
        let s = frame.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let src = frame.data();
        match *self {
            Augment::Identity => frame.clone(),
            Augment::Brightness(b) => frame.map(|v| (v + b).clamp(0.0, 1.0)),
            Augment::HFlip => {
                let mut out = vec![0.0; src.len()];
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            out[(ch * h + y) * w + x] = src[(ch * h + y) * w + (w - 1 - x)];
                        }
                    }
                }
                Tensor::new(s.to_vec(), out).unwrap()
            }
            Augment::Translate { dx, dy } => {
                // Edge pixels are replicated into the uncovered border.
                let mut out = vec![0.0; src.len()];
                for ch in 0..c {
                    for y in 0..h {
                        let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
                        for x in 0..w {
                            let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                            out[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
                        }
                    }
                }
                Tensor::new(s.to_vec(), out).unwrap()
            }
        }
    }
}

/// `rho` augmentations drawn uniformly from {flip, translate, brightness,
/// identity}. Translations are up to 4 pixels per axis, brightness shifts
/// up to 0.1.
pub fn sample_augments(rho: usize, seed: u64) -> Vec<Augment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rho)
        .map(|_| match rng.gen_range(0..4) {
            0 => Augment::HFlip,
            1 => Augment::Translate {
                dx: rng.gen_range(-4..=4),
                dy: rng.gen_range(-4..=4),
            },
            2 => Augment::Brightness(rng.gen_range(-0.1..=0.1)),
            _ => Augment::Identity,
        })
        .collect()
}

/// Mean of augmented encoder features of one benign frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub e: Tensor,
    pub rho: usize,
    /// `(clip index, frame index)` of the source frame.
    pub source: (usize, usize),
}

pub fn prototype_from(frame: &Tensor, augments: &[Augment], params: &ModelParams, source: (usize, usize)) -> Result<Prototype> {
    if augments.is_empty() {
        return Err(Error::Config("prototype needs at least one augmentation".into()));
    }
    let mut acc: Option<Tensor> = None;
    for a in augments {
        let f = params.encode_features(&a.apply(frame))?;
        match &mut acc {
            None => acc = Some(f),
            Some(t) => t.add_assign(&f),
        }
    }
    let n = augments.len() as f64;
    let e = acc.unwrap().map(|v| v / n);
    let len = e.len();
    Ok(Prototype {
        e: e.reshaped(&[len])?,
        rho: augments.len(),
        source,
    })
}

pub fn prototype(frame: &Tensor, rho: usize, seed: u64, params: &ModelParams, source: (usize, usize)) -> Result<Prototype> {
    if rho < 1 {
        return Err(Error::Config("rho must be at least 1".into()));
    }
    prototype_from(frame, &sample_augments(rho, seed), params, source)
}

/// Feature shift of one adversarial feature map.
///
/// `cosine`: `cos(adv, e)`.
/// `contrastive`: the log-softmax of the prototype term among the prototype
/// and negatives, `cos(adv, e)/tau - logsumexp([cos(adv, e), cos(adv, n_k)...]/tau)`.
/// Lowering it pulls `adv` away from `e` and toward the negatives.
pub fn feature_shift(
    g: &mut Graph,
    adv_feat: Var,
    proto: &Prototype,
    negatives: &[Tensor],
    tau: f64,
    form: FaForm,
) -> Result<Var> {
    let n = g.value(adv_feat).len();
    if n != proto.e.len() {
        return Err(Error::Shape(format!("{n} adversarial features against a {}-value prototype", proto.e.len())));
    }
    let adv_feat = g.reshape(adv_feat, &[n]);
    let e = g.constant(proto.e.clone());
    let cp = g.cosine(adv_feat, e)?;
    match form {
        FaForm::Cosine => Ok(cp),
        FaForm::Contrastive => {
            if negatives.is_empty() {
                return Err(Error::Config("contrastive feature shift needs negatives".into()));
            }
            let mut terms = vec![cp];
            for n in negatives {
                let nv = g.constant(n.clone());
                terms.push(g.cosine(adv_feat, nv)?);
            }
            let s = g.stack(&terms);
            let s = g.scale(s, 1.0 / tau);
            let lse = g.logsumexp(s);
            let head = g.scale(cp, 1.0 / tau);
            Ok(g.sub(head, lse))
        }
    }
}

/// Mean cosine similarity of consecutive adversarial feature maps.
pub fn memory_misalign(g: &mut Graph, adv_feats: &[Var]) -> Result<Var> {
    if adv_feats.len() < 2 {
        return Err(Error::Config("memory misalignment needs at least two frames".into()));
    }
    let mut sims = Vec::with_capacity(adv_feats.len() - 1);
    for w in adv_feats.windows(2) {
        sims.push(g.cosine(w[0], w[1])?);
    }
    let s = g.stack(&sims);
    Ok(g.mean(s))
}

/// Per-term loss handles; `ma` is `None` for single-frame units.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub sa: Var,
    pub fa: Var,
    pub ma: Option<Var>,
}

/// `w_sa*J_sa + w_fa*J_fa + w_ma*J_ma`. Terms with zero weight are left out
/// of the graph entirely, so they contribute no gradient.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, cfg: &LossConfig) -> Var {
    let mut parts = Vec::new();
    let mut add = |g: &mut Graph, v: Var, w: f64| {
        if w != 0.0 {
            parts.push(g.scale(v, w));
        }
    };
    add(g, terms.sa, cfg.w_sa);
    add(g, terms.fa, cfg.w_fa);
    if let Some(ma) = terms.ma {
        add(g, ma, cfg.w_ma);
    }
    if parts.is_empty() {
        return g.constant(Tensor::scalar(0.0));
    }
    let s = g.stack(&parts);
    g.sum(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmodel::ModelConfig;

    fn softplus(x: f64) -> f64 {
        (1.0 + x.exp()).ln()
    }

    #[test]
    fn region_masks() {
        let rm = build_region_masks(&Mask::empty(3, 3), -1.0);
        assert_eq!(rm.m_plus.count(), 0);
        assert_eq!(rm.m_minus.count(), 9);
        assert!(rm.y_minus.iter().all(|&v| v == 0.0));
        let gt = Mask::from_fn(4, 4, |y, x| x > y);
        let rm = build_region_masks(&gt, -1.0);
        for i in 0..16 {
            assert!(rm.m_plus.data()[i] ^ rm.m_minus.data()[i]);
            assert_eq!(rm.y_minus[i], if rm.m_plus.data()[i] { -1.0 } else { 0.0 });
        }
    }

    #[test]
    fn bce_matches_closed_form_on_2x2() {
        let gt = Mask::from_vec(2, 2, vec![true, false, false, true]).unwrap();
        let rm = build_region_masks(&gt, -1.0);
        let z = [0.3, -1.2, 2.0, -0.7];
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![2, 2], z.to_vec()).unwrap());
        let (t, f, b) = semantic_confusion(&mut g, l, &rm, SaForm::Bce).unwrap();
        // -ln(1 - sigmoid(z)) on each pixel, split by region.
        let nl = |z: f64| -(1.0 - 1.0 / (1.0 + (-z).exp())).ln();
        let fg = (nl(0.3) + nl(-0.7)) / 4.0;
        let bg = (nl(-1.2) + nl(2.0)) / 4.0;
        assert!((g.value(f).item() - fg).abs() < 1e-12);
        assert!((g.value(b).item() - bg).abs() < 1e-12);
        assert!((g.value(t).item() - fg - bg).abs() < 1e-12);
        // Strongly background-confident logits approach the minimum 0.
        let l = g.constant(Tensor::full(&[2, 2], -30.0));
        let (t, _, _) = semantic_confusion(&mut g, l, &rm, SaForm::Bce).unwrap();
        assert!(g.value(t).item() < 1e-6 && g.value(t).item() >= 0.0);
        assert!((g.value(t).item() - softplus(-30.0)).abs() < 1e-12);
    }

    #[test]
    fn mse_zero_at_exact_match() {
        // No foreground: the target is all zero and 1 - z vanishes on the background.
        let rm = build_region_masks(&Mask::empty(2, 2), -1.0);
        let mut g = Graph::new();
        let l = g.constant(Tensor::full(&[2, 2], 1.0));
        let (t, _, _) = semantic_confusion(&mut g, l, &rm, SaForm::Mse).unwrap();
        assert_eq!(g.value(t).item(), 0.0);
    }

    #[test]
    fn mse_foreground_floor_is_t_squared() {
        // With z = t on the foreground and 1 on the background, only the
        // second term's `- y_minus` on foreground pixels remains.
        let gt = Mask::from_vec(2, 2, vec![true, false, false, false]).unwrap();
        let rm = build_region_masks(&gt, -1.0);
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![2, 2], vec![-1.0, 1.0, 1.0, 1.0]).unwrap());
        let (t, a, b) = semantic_confusion(&mut g, l, &rm, SaForm::Mse).unwrap();
        assert_eq!(g.value(a).item(), 0.0);
        assert_eq!(g.value(b).item(), 0.25);
        assert_eq!(g.value(t).item(), 0.25);
    }

    #[test]
    fn non_finite_logits_are_errors() {
        let rm = build_region_masks(&Mask::empty(1, 2), -1.0);
        let mut g = Graph::new();
        let l = g.constant(Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap());
        assert!(semantic_confusion(&mut g, l, &rm, SaForm::Bce).is_err());
    }

    #[test]
    fn contrastive_matches_two_term_log_softmax() {
        let mut g = Graph::new();
        let adv = g.constant(Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap());
        let proto = Prototype {
            e: Tensor::new(vec![3], vec![2.0, 0.0, 0.0]).unwrap(),
            rho: 1,
            source: (0, 0),
        };
        let neg = Tensor::new(vec![3], vec![0.0, 0.0, 5.0]).unwrap();
        let v = feature_shift(&mut g, adv, &proto, &[neg], 1.0, FaForm::Contrastive).unwrap();
        let expected = (1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((g.value(v).item() - expected).abs() < 1e-12);
        let c = feature_shift(&mut g, adv, &proto, &[], 1.0, FaForm::Cosine).unwrap();
        assert!((g.value(c).item() - 1.0).abs() < 1e-12);
        assert!(feature_shift(&mut g, adv, &proto, &[], 1.0, FaForm::Contrastive).is_err());
        let z = g.constant(Tensor::zeros(&[3]));
        assert!(feature_shift(&mut g, z, &proto, &[], 1.0, FaForm::Cosine).is_err());
    }

    #[test]
    fn misalignment_of_known_pairs() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2], vec![3.0, 0.0]).unwrap());
        let c = g.constant(Tensor::new(vec![2], vec![0.0, 2.0]).unwrap());
        let v = memory_misalign(&mut g, &[a, b, c]).unwrap();
        assert!((g.value(v).item() - 0.5).abs() < 1e-12);
        let v = memory_misalign(&mut g, &[a, a, a]).unwrap();
        assert_eq!(g.value(v).item(), 1.0);
        let v = memory_misalign(&mut g, &[a, c]).unwrap();
        assert_eq!(g.value(v).item(), 0.0);
        assert!(memory_misalign(&mut g, &[a]).is_err());
    }

    #[test]
    fn prototype_degenerate_cases() {
        let p = ModelParams::init(ModelConfig::micro(8, 8), 3).unwrap();
        let frame = Tensor::new(vec![3, 8, 8], (0..192).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let f = p.encode_features(&frame).unwrap();
        let flat = f.clone().reshaped(&[f.len()]).unwrap();
        let one = prototype_from(&frame, &[Augment::Identity], &p, (0, 0)).unwrap();
        assert_eq!(one.e, flat);
        let four = prototype_from(&frame, &[Augment::Identity; 4], &p, (0, 0)).unwrap();
        for (a, b) in four.e.data().iter().zip(flat.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let augs = sample_augments(4, 9);
        assert_eq!(augs, sample_augments(4, 9));
        let proto = prototype_from(&frame, &augs, &p, (0, 0)).unwrap();
        let max_norm = augs
            .iter()
            .map(|a| p.encode_features(&a.apply(&frame)).unwrap().norm())
            .fold(0.0, f64::max);
        assert!(proto.e.norm() <= max_norm + 1e-12);
    }

    #[test]
    fn augment_geometry() {
        let t = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(Augment::HFlip.apply(&t).data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        let s = Augment::Translate { dx: 1, dy: 0 }.apply(&t);
        assert_eq!(s.data(), &[1.0, 1.0, 2.0, 4.0, 4.0, 5.0]);
        let b = Augment::Brightness(0.1).apply(&Tensor::full(&[1, 1, 2], 0.95));
        assert_eq!(b.data(), &[1.0, 1.0]);
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.5));
        let b = g.constant(Tensor::scalar(-2.0));
        let c = g.constant(Tensor::scalar(0.25));
        let cfg = LossConfig::default();
        let t = total_loss(&mut g, &LossTerms { sa: a, fa: b, ma: Some(c) }, &cfg);
        assert_eq!(g.value(t).item(), 1.5 - 2.0 + 0.25);
        let t = total_loss(&mut g, &LossTerms { sa: a, fa: b, ma: None }, &cfg);
        assert_eq!(g.value(t).item(), -0.5);
        let w = LossConfig { w_fa: 0.0, w_ma: 2.0, ..cfg };
        let t = total_loss(&mut g, &LossTerms { sa: a, fa: b, ma: Some(c) }, &w);
        assert_eq!(g.value(t).item(), 2.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { rho: 0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { w_ma: -1.0, ..Default::default() }.validate().is_err());
    }
}
