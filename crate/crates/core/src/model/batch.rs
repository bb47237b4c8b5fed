use crate::error::{Error, Result};
use crate::model::config::COMPRESSION;

/// Packed model input for `batch` sequences of `len` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub len: usize,
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// 1.0 for real tokens, 0.0 for padding.
    pub attention_mask: Vec<f64>,
}

impl Batch {
    pub fn new(
        batch: usize,
        len: usize,
        token_ids: Vec<usize>,
        segment_ids: Vec<usize>,
        attention_mask: Vec<f64>,
    ) -> Result<Self> {
        let b = Batch {
            batch,
            len,
            token_ids,
            segment_ids,
            attention_mask,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.batch * self.len;
        if self.batch == 0 || self.len == 0 {
            return Err(Error::dim("empty batch"));
        }
        if self.token_ids.len() != n || self.segment_ids.len() != n || self.attention_mask.len() != n {
            return Err(Error::dim(format!(
                "batch {}x{} with {} ids, {} segments, {} mask entries",
                self.batch,
                self.len,
                self.token_ids.len(),
                self.segment_ids.len(),
                self.attention_mask.len()
            )));
        }
        if self.attention_mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Data("attention mask entries must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Concatenates single-sequence batches of equal length.
    pub fn stack<'a>(parts: impl IntoIterator<Item = &'a Batch>) -> Result<Batch> {
        let mut out = Batch {
            batch: 0,
            len: 0,
            token_ids: Vec::new(),
            segment_ids: Vec::new(),
            attention_mask: Vec::new(),
        };
        for p in parts {
            if out.batch > 0 && p.len != out.len {
                return Err(Error::dim(format!("cannot stack lengths {} and {}", out.len, p.len)));
            }
            out.len = p.len;
            out.batch += p.batch;
            out.token_ids.extend_from_slice(&p.token_ids);
            out.segment_ids.extend_from_slice(&p.segment_ids);
            out.attention_mask.extend_from_slice(&p.attention_mask);
        }
        out.validate()?;
        Ok(out)
    }

    /// Mask row of sequence `i`.
    pub fn mask_row(&self, i: usize) -> &[f64] {
        &self.attention_mask[i * self.len..(i + 1) * self.len]
    }
}

/// Mask at the encoder resolution: a compressed slot is valid iff any of
/// the `COMPRESSION` positions it covers is valid.
pub fn compress_mask(mask: &[f64], batch: usize, len: usize) -> Result<Vec<f64>> {
    if mask.len() != batch * len {
        return Err(Error::dim(format!("mask of length {} for {batch}x{len}", mask.len())));
    }
    if len % COMPRESSION != 0 {
        return Err(Error::Length(format!(
            "sequence length {len} not divisible by {COMPRESSION}"
        )));
    }
    Ok(mask
        .chunks_exact(COMPRESSION)
        .map(|w| if w.iter().any(|&m| m != 0.0) { 1.0 } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compress_mask_examples() {
        assert_eq!(
            compress_mask(&[1., 1., 1., 1., 0., 0., 0., 0.], 1, 8).unwrap(),
            vec![1., 0.]
        );
        assert_eq!(compress_mask(&[1., 0., 0., 0., 0., 0., 0., 0.], 1, 8).unwrap()[0], 1.0);
        assert_eq!(compress_mask(&[1.0; 16], 2, 8).unwrap(), vec![1.0; 4]);
        assert!(matches!(compress_mask(&[1.0; 6], 1, 6), Err(Error::Length(_))));
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(1, 4, vec![0; 4], vec![0; 4], vec![1.0; 4]).is_ok());
        assert!(matches!(
            Batch::new(1, 4, vec![0; 3], vec![0; 4], vec![1.0; 4]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            Batch::new(1, 4, vec![0; 4], vec![0; 4], vec![1.0, 0.5, 1.0, 1.0]),
            Err(Error::Data(_))
        ));
    }
}
