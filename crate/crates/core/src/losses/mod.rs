//! Contrastive objectives over image/text embedding batches.
//!
//! All values are in nats and are computed in double precision whatever the
//! storage type of the inputs. Each loss returns the analytic gradient with
//! respect to every input row and to the temperature.
//!
//! Naming: `I`/`T` are the anchor images and captions, `I⁻`/`T⁻` their hard
//! negatives. `L(A→P; X)` is the directional NCE loss of anchors `A` against
//! their row-aligned positives `P`, with the extra rows `X` added to every
//! softmax denominator.

mod gradcheck;
mod kernel;

pub use gradcheck::{check_all, check_gradients, seeded_batch, GradCheckReport, GRAD_SKIP_FLOOR};
pub use kernel::log_sum_exp;

use kernel::{Blocks, Slot, Targets, Term};

use crate::caption::SimilarityConfig;
use crate::error::{Error, Result};
use crate::matrix::{dot, EmbeddingMatrix, Matrix};
use crate::scalar::Scalar;

/// One training batch.
///
/// `group[r]` is the caption index of image row `r`; captions with several
/// images carry several positives. Hard-negative captions (`hn_txt`) and
/// images (`hn_img`) are optional and only some losses need them.
#[derive(Debug, Clone)]
pub struct BatchTensors<T> {
    pub img: EmbeddingMatrix<T>,
    pub txt: EmbeddingMatrix<T>,
    pub hn_txt: Option<EmbeddingMatrix<T>>,
    pub hn_img: Option<EmbeddingMatrix<T>>,
    pub group: Vec<usize>,
    pub config: SimilarityConfig,
}

impl<T: Scalar> BatchTensors<T> {
    /// Row-aligned pairs: image k belongs to caption k.
    pub fn paired(img: EmbeddingMatrix<T>, txt: EmbeddingMatrix<T>, config: SimilarityConfig) -> Result<Self> {
        let group = (0..img.rows()).collect();
        Self::grouped(img, txt, group, config)
    }

    pub fn grouped(
        img: EmbeddingMatrix<T>,
        txt: EmbeddingMatrix<T>,
        group: Vec<usize>,
        config: SimilarityConfig,
    ) -> Result<Self> {
        let b = BatchTensors { img, txt, hn_txt: None, hn_img: None, group, config };
        b.validate()?;
        Ok(b)
    }

    pub fn with_hard_negatives(
        mut self,
        hn_txt: Option<EmbeddingMatrix<T>>,
        hn_img: Option<EmbeddingMatrix<T>>,
    ) -> Result<Self> {
        self.hn_txt = hn_txt;
        self.hn_img = hn_img;
        self.validate()?;
        Ok(self)
    }

    /// Number of images per caption.
    pub fn positives_per_caption(&self) -> Vec<usize> {
        let mut counts = vec![0; self.txt.rows()];
        for &g in &self.group {
            counts[g] += 1;
        }
        counts
    }

    fn validate(&self) -> Result<()> {
        let d = self.img.dim();
        let all = [Some(&self.img), Some(&self.txt), self.hn_txt.as_ref(), self.hn_img.as_ref()];
        for m in all.into_iter().flatten() {
            if m.dim() != d {
                return Err(Error::DimensionMismatch(format!("batch mixes dims {d} and {}", m.dim())));
            }
            m.require_normalized()?;
        }
        if self.group.len() != self.img.rows() {
            return Err(Error::DimensionMismatch(format!(
                "group has {} entries for {} images",
                self.group.len(),
                self.img.rows()
            )));
        }
        if let Some(&g) = self.group.iter().find(|&&g| g >= self.txt.rows()) {
            return Err(Error::invalid(format!("orphan image: caption index {g} out of range")));
        }
        if let Some(c) = self.positives_per_caption().iter().position(|&n| n == 0) {
            return Err(Error::invalid(format!("caption {c} has no image")));
        }
        Ok(())
    }

    fn require_aligned(&self) -> Result<()> {
        if self.img.rows() != self.txt.rows() || self.group.iter().enumerate().any(|(i, &g)| i != g) {
            return Err(Error::invalid("loss needs row-aligned image/text pairs (one image per caption)"));
        }
        Ok(())
    }

    fn hn_txt(&self) -> Result<&EmbeddingMatrix<T>> {
        let hn = self.hn_txt.as_ref().ok_or_else(|| Error::invalid("missing hard-negative texts"))?;
        if hn.rows() != self.txt.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} hard-negative texts for {} captions",
                hn.rows(),
                self.txt.rows()
            )));
        }
        Ok(hn)
    }

    fn hn_img(&self) -> Result<&EmbeddingMatrix<T>> {
        let hn = self.hn_img.as_ref().ok_or_else(|| Error::invalid("missing hard-negative images"))?;
        if hn.rows() != self.txt.rows() {
            return Err(Error::DimensionMismatch(format!(
                "{} hard-negative images for {} captions",
                hn.rows(),
                self.txt.rows()
            )));
        }
        Ok(hn)
    }

    pub(crate) fn blocks(&self) -> Blocks {
        let conv = |m: &EmbeddingMatrix<T>| m.cast::<f64>().matrix().clone();
        Blocks {
            mats: [
                Some(conv(&self.img)),
                Some(conv(&self.txt)),
                self.hn_txt.as_ref().map(conv),
                self.hn_img.as_ref().map(conv),
            ],
            temperature: self.config.temperature(),
        }
    }
}

/// Analytic gradients, laid out like the inputs of the loss that produced them.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub img: Matrix<f64>,
    pub txt: Matrix<f64>,
    pub hn_txt: Option<Matrix<f64>>,
    pub hn_img: Option<Matrix<f64>>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub gradients: Gradients,
}

/// Losses addressable by [`check_gradients`] and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    MultiPositive,
    ImageToImage,
    /// `L(I→T; T⁻)`, with `T⁻` taken from `hn_txt` when present.
    NceDirectional,
    NegClip,
    TripletClip,
    ClipConcat,
    /// `txt`/`img` are `T`/`I`, `hn_txt`/`hn_img` are `T⁻`/`I⁻` (possibly fewer rows).
    HnMixed,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::MultiPositive,
        LossKind::ImageToImage,
        LossKind::NceDirectional,
        LossKind::NegClip,
        LossKind::TripletClip,
        LossKind::ClipConcat,
        LossKind::HnMixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::MultiPositive => "multi_positive",
            LossKind::ImageToImage => "i2i",
            LossKind::NceDirectional => "nce_directional",
            LossKind::NegClip => "negclip",
            LossKind::TripletClip => "tripletclip",
            LossKind::ClipConcat => "clip_concat",
            LossKind::HnMixed => "hn_mixed",
        }
    }

    /// Validates the batch for this loss and returns the terms to evaluate.
    pub(crate) fn terms<T: Scalar>(self, b: &BatchTensors<T>) -> Result<Vec<Term>> {
        use Slot::*;
        match self {
            LossKind::MultiPositive => Ok(multi_positive_terms(&b.group, b.txt.rows())),
            LossKind::ImageToImage => i2i_terms(&b.group),
            LossKind::NceDirectional => {
                b.require_aligned()?;
                Ok(match &b.hn_txt {
                    Some(_) => vec![Term::diagonal(&[Img], &[Txt, HnTxt], 1.0)],
                    None => vec![Term::diagonal(&[Img], &[Txt], 1.0)],
                })
            }
            LossKind::NegClip => {
                b.require_aligned()?;
                b.hn_txt()?;
                Ok(negclip_terms(Img, Txt, HnTxt, 1.0))
            }
            LossKind::TripletClip => {
                b.require_aligned()?;
                b.hn_txt()?;
                b.hn_img()?;
                let mut t = negclip_terms(Img, Txt, HnTxt, 1.0);
                t.extend(negclip_terms(HnImg, HnTxt, Txt, 1.0));
                Ok(t)
            }
            LossKind::ClipConcat => {
                b.require_aligned()?;
                b.hn_txt()?;
                b.hn_img()?;
                Ok(vec![
                    Term::diagonal(&[Img, HnImg], &[Txt, HnTxt], 0.5),
                    Term::diagonal(&[Txt, HnTxt], &[Img, HnImg], 0.5),
                ])
            }
            LossKind::HnMixed => {
                b.require_aligned()?;
                let n_hn = match (&b.hn_txt, &b.hn_img) {
                    (Some(t), Some(i)) if t.rows() == i.rows() => t.rows(),
                    (None, None) => 0,
                    _ => {
                        return Err(Error::invalid(
                            "hard-negative texts and images must both be present with equal rows",
                        ))
                    }
                };
                Ok(hn_mixed_terms(b.txt.rows(), n_hn))
            }
        }
    }

    pub fn evaluate<T: Scalar>(self, b: &BatchTensors<T>) -> Result<LossValue> {
        let terms = self.terms(b)?;
        Ok(finish(b.blocks().evaluate(&terms)))
    }
}

fn finish(e: kernel::Evaluated) -> LossValue {
    let [img, txt, hn_txt, hn_img] = e.grads;
    LossValue {
        value: e.value,
        gradients: Gradients {
            img: img.expect("image block"),
            txt: txt.expect("text block"),
            hn_txt,
            hn_img,
            temperature: e.d_temperature,
        },
    }
}

fn multi_positive_terms(group: &[usize], n_captions: usize) -> Vec<Term> {
    let mut members = vec![Vec::new(); n_captions];
    for (r, &g) in group.iter().enumerate() {
        members[g].push(r);
    }
    let t2i: Vec<Vec<(usize, f64)>> =
        members.iter().map(|imgs| imgs.iter().map(|&r| (r, 1.0 / imgs.len() as f64)).collect()).collect();
    let i2t = group.iter().map(|&g| vec![(g, 1.0)]).collect();
    vec![
        Term {
            anchors: vec![Slot::Txt],
            candidates: vec![Slot::Img],
            targets: Targets::Soft(t2i),
            exclude_self: false,
            weight: 0.5,
        },
        Term {
            anchors: vec![Slot::Img],
            candidates: vec![Slot::Txt],
            targets: Targets::Soft(i2t),
            exclude_self: false,
            weight: 0.5,
        },
    ]
}

fn i2i_terms(group: &[usize]) -> Result<Vec<Term>> {
    if group.len() < 2 {
        return Err(Error::invalid("image-to-image loss needs at least two images"));
    }
    let mut targets = Vec::with_capacity(group.len());
    for (i, &g) in group.iter().enumerate() {
        let siblings: Vec<usize> =
            group.iter().enumerate().filter(|&(j, &h)| j != i && h == g).map(|(j, _)| j).collect();
        if siblings.is_empty() {
            return Err(Error::invalid(format!("no siblings: caption {g} has a single image")));
        }
        let w = 1.0 / siblings.len() as f64;
        targets.push(siblings.into_iter().map(|j| (j, w)).collect());
    }
    Ok(vec![Term {
        anchors: vec![Slot::Img],
        candidates: vec![Slot::Img],
        targets: Targets::Soft(targets),
        exclude_self: true,
        weight: 1.0,
    }])
}

/// `L(I→T; X) + L(T→I)`.
fn negclip_terms(img: Slot, txt: Slot, extra: Slot, weight: f64) -> Vec<Term> {
    vec![Term::diagonal(&[img], &[txt, extra], weight), Term::diagonal(&[txt], &[img], weight)]
}

fn hn_mixed_terms(n_pos: usize, n_hn: usize) -> Vec<Term> {
    use Slot::*;
    let total = (n_pos + n_hn) as f64;
    let w_pos = n_pos as f64 / total;
    let w_hn = n_hn as f64 / total;
    let mut terms = if n_hn > 0 {
        negclip_terms(Img, Txt, HnTxt, w_pos)
    } else {
        vec![Term::diagonal(&[Img], &[Txt], w_pos), Term::diagonal(&[Txt], &[Img], w_pos)]
    };
    if n_hn > 0 {
        terms.extend(negclip_terms(HnImg, HnTxt, Txt, w_hn));
    }
    terms
}

/// Multi-positive objective.
///
/// Text→image uses soft targets spread uniformly over the caption's images;
/// image→text uses one-hot targets. The two directions are averaged, so with
/// one image per caption this is exactly the symmetric InfoNCE loss.
pub fn loss_multi_positive<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    LossKind::MultiPositive.evaluate(b)
}

/// Image-to-image objective: each image predicts its siblings (images of the
/// same caption) among all other images in the batch.
pub fn loss_i2i<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    LossKind::ImageToImage.evaluate(b)
}

/// `L(anchors→positives; extra_negatives)`. Gradients land in `img`
/// (anchors), `txt` (positives) and `hn_txt` (extras).
pub fn loss_nce_directional<T: Scalar>(
    anchors: &EmbeddingMatrix<T>,
    positives: &EmbeddingMatrix<T>,
    extra_negatives: Option<&EmbeddingMatrix<T>>,
    cfg: SimilarityConfig,
) -> Result<LossValue> {
    if anchors.rows() != positives.rows() {
        return Err(Error::DimensionMismatch(format!("{} anchors vs {} positives", anchors.rows(), positives.rows())));
    }
    let b = BatchTensors::paired(anchors.clone(), positives.clone(), cfg)?
        .with_hard_negatives(extra_negatives.cloned(), None)?;
    LossValue::from_terms(
        &b,
        vec![match extra_negatives {
            Some(_) => Term::diagonal(&[Slot::Img], &[Slot::Txt, Slot::HnTxt], 1.0),
            None => Term::diagonal(&[Slot::Img], &[Slot::Txt], 1.0),
        }],
    )
}

impl LossValue {
    fn from_terms<T: Scalar>(b: &BatchTensors<T>, terms: Vec<Term>) -> Result<Self> {
        Ok(finish(b.blocks().evaluate(&terms)))
    }
}

/// Symmetric InfoNCE on row-aligned pairs: `½(L(I→T) + L(T→I))`.
pub fn loss_clip<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    b.require_aligned()?;
    LossValue::from_terms(
        b,
        vec![Term::diagonal(&[Slot::Img], &[Slot::Txt], 0.5), Term::diagonal(&[Slot::Txt], &[Slot::Img], 0.5)],
    )
}

/// NegCLIP: `L(I→T; T⁻) + L(T→I)`.
pub fn loss_negclip<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    LossKind::NegClip.evaluate(b)
}

/// TripletCLIP: `NegCLIP(I, T, T⁻) + NegCLIP(I⁻, T⁻, T)`.
pub fn loss_tripletclip<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    LossKind::TripletClip.evaluate(b)
}

/// Symmetric InfoNCE over the concatenated batches `I ∪ I⁻` and `T ∪ T⁻`.
pub fn loss_clip_concat<T: Scalar>(b: &BatchTensors<T>) -> Result<LossValue> {
    LossKind::ClipConcat.evaluate(b)
}

/// Batch-balanced hard-negative loss:
/// `(|T|·NegCLIP(I, T, T⁻) + |T⁻|·NegCLIP(I⁻, T⁻, T)) / (|T| + |T⁻|)`.
///
/// `positives_t` may contain captions whose hard negative is not in the batch,
/// and `hn_t` may hold hard negatives whose base caption is absent. Every row
/// of `positives_t` sits in the denominator of the hard-negative side.
pub fn loss_hn_mixed<T: Scalar>(
    positives_t: &EmbeddingMatrix<T>,
    positives_i: &EmbeddingMatrix<T>,
    hn_t: Option<&EmbeddingMatrix<T>>,
    hn_i: Option<&EmbeddingMatrix<T>>,
    cfg: SimilarityConfig,
) -> Result<LossValue> {
    let b = BatchTensors::paired(positives_i.clone(), positives_t.clone(), cfg)?
        .with_hard_negatives(hn_t.cloned(), hn_i.cloned())?;
    LossKind::HnMixed.evaluate(&b)
}

/// The two log-denominator inflations relating concatenated CLIP to
/// TripletCLIP: `(C(T→I⁻), C(T⁻→I))`, where
/// `C(T→I⁻) = L(T→I; I⁻) - L(T→I)` and symmetrically for `T⁻`.
///
/// `4·clip_concat = tripletclip + C(T→I⁻) + C(T⁻→I)` and both costs are
/// non-negative.
pub fn decomposition_costs<T: Scalar>(b: &BatchTensors<T>) -> Result<(f64, f64)> {
    b.require_aligned()?;
    let tau = b.config.temperature();
    let img = b.img.cast::<f64>();
    let txt = b.txt.cast::<f64>();
    let hn_img = b.hn_img()?.cast::<f64>();
    let hn_txt = b.hn_txt()?.cast::<f64>();
    let inflation = |anchors: &EmbeddingMatrix<f64>, own: &EmbeddingMatrix<f64>, extra: &EmbeddingMatrix<f64>| {
        let n = anchors.rows();
        let mut acc = 0.0;
        for k in 0..n {
            let a = anchors.row(k);
            let base: Vec<f64> = (0..own.rows()).map(|j| dot(a, own.row(j)) / tau).collect();
            let mut all = base.clone();
            all.extend((0..extra.rows()).map(|j| dot(a, extra.row(j)) / tau));
            acc += log_sum_exp(&all) - log_sum_exp(&base);
        }
        acc / n as f64
    };
    Ok((inflation(&txt, &img, &hn_img), inflation(&hn_txt, &hn_img, &img)))
}
