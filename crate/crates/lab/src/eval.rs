use serde::{Deserialize, Serialize};
use synthkit_core::metrics::recall_at_k;
use synthkit_core::{cosine_similarity_matrix, EmbeddingMatrix, Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
}

/// Recall@1 and recall@5 of row-aligned pairs, averaged over image→text and
/// text→image. `k` is capped at the number of rows.
pub fn eval_retrieval<T: Scalar>(img: &EmbeddingMatrix<T>, txt: &EmbeddingMatrix<T>) -> Result<RetrievalScores> {
    if img.rows() != txt.rows() {
        return Err(Error::DimensionMismatch(format!("{} images vs {} captions", img.rows(), txt.rows())));
    }
    let i2t = cosine_similarity_matrix(img, txt)?;
    let t2i = i2t.transpose();
    let k5 = 5.min(img.rows());
    Ok(RetrievalScores {
        recall_at_1: 0.5 * (recall_at_k(&i2t, 1)? + recall_at_k(&t2i, 1)?),
        recall_at_5: 0.5 * (recall_at_k(&i2t, k5)? + recall_at_k(&t2i, k5)?),
    })
}

/// Share of images scoring their own caption strictly above the caption's
/// hard negative. `image_caption[r]` is the caption of image row `r`.
pub fn hn_discrimination<T: Scalar>(
    img: &EmbeddingMatrix<T>,
    image_caption: &[usize],
    txt: &EmbeddingMatrix<T>,
    hn_txt: &EmbeddingMatrix<T>,
) -> Result<f64> {
    if image_caption.len() != img.rows() {
        return Err(Error::DimensionMismatch("image_caption length differs from image rows".into()));
    }
    if txt.rows() != hn_txt.rows() {
        return Err(Error::DimensionMismatch(format!("{} captions vs {} hard negatives", txt.rows(), hn_txt.rows())));
    }
    if img.rows() == 0 {
        return Err(Error::Empty("images"));
    }
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum::<f64>();
    let wins = (0..img.rows())
        .filter(|&r| {
            let c = image_caption[r];
            dot(img.row(r), txt.row(c)) > dot(img.row(r), hn_txt.row(c))
        })
        .count();
    Ok(wins as f64 / img.rows() as f64)
}
