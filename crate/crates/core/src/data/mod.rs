//! Domain data: synthetic shifted domains, IDX ingestion, view augmentation
//! and the sealed single-domain training stream.

mod augment;
mod idx;
mod synthetic;

pub use augment::{make_views, AugmentationPolicy};
pub use idx::{load_idx, parse_idx};
pub use synthetic::{generate_domain, SyntheticDomainSpec, Transform};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Class labels. Reading them requires an [`EvalAccess`] token, which only
/// the evaluation code path creates; training code has no way to see them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<usize>);

/// Capability to read [`Labels`].
#[derive(Debug)]
pub struct EvalAccess {
    _private: (),
}

impl EvalAccess {
    /// For evaluation and test code only.
    pub fn for_evaluation() -> Self {
        Self { _private: () }
    }
}

impl Labels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reveal(&self, _access: &EvalAccess) -> &[usize] {
        &self.0
    }
}

/// Flattened images of one domain, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSource {
    dim: usize,
    pixels: Vec<f32>,
    labels: Option<Labels>,
}

impl DomainSource {
    pub fn new(dim: usize, pixels: Vec<f32>, labels: Option<Labels>) -> Result<Self> {
        if dim == 0 || !pixels.len().is_multiple_of(dim) {
            return Err(Error::Parameter(format!(
                "{} pixels do not split into images of {dim}",
                pixels.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != pixels.len() / dim {
                return Err(Error::dim(
                    "domain_source",
                    &[pixels.len() / dim],
                    &[l.len()],
                ));
            }
        }
        Ok(Self {
            dim,
            pixels,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// All images as an `[n × dim]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::new(vec![self.len(), self.dim], self.pixels.clone())
    }

    pub fn select(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        Tensor::stack_rows(indices.iter().map(|&i| self.image(i)))
    }

    /// Drops the labels, leaving what a training stream may see.
    pub fn unlabeled(&self) -> Self {
        Self {
            dim: self.dim,
            pixels: self.pixels.clone(),
            labels: None,
        }
    }

    /// Shuffled full batches of `batch_size` images; a short tail is dropped.
    pub fn batches(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<Tensor<f32>>> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        let order = rng.permutation(self.len());
        order
            .chunks_exact(batch_size)
            .map(|idx| self.select(idx))
            .collect()
    }
}

/// Ordered unlabeled domains, exposed one at a time. Advancing seals the
/// previous domain: its data is dropped and any later request for it fails.
#[derive(Debug)]
pub struct DomainStream {
    domains: Vec<Option<DomainSource>>,
    current: Option<usize>,
}

impl DomainStream {
    pub fn new(sources: Vec<DomainSource>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Contract(
                "a domain stream needs at least one domain".into(),
            ));
        }
        Ok(Self {
            domains: sources.into_iter().map(|s| Some(s.unlabeled())).collect(),
            current: None,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// 0-based index of the domain currently open, if any.
    pub fn current_index(&self) -> Option<usize> {
        self.current
    }

    /// Seals the open domain and opens the next one.
    pub fn advance(&mut self) -> Option<usize> {
        let next = self.current.map_or(0, |c| c + 1);
        if let Some(c) = self.current {
            self.domains[c] = None;
        }
        if next >= self.domains.len() {
            self.current = Some(self.domains.len());
            return None;
        }
        self.current = Some(next);
        Some(next)
    }

    /// Training data of domain `index`; only the open domain is reachable.
    pub fn domain(&self, index: usize) -> Result<&DomainSource> {
        match self.current {
            Some(c) if index < c => Err(Error::SealedDomain(index)),
            Some(c) if index == c => self.domains[index]
                .as_ref()
                .ok_or(Error::SealedDomain(index)),
            _ => Err(Error::Contract(format!("domain {index} is not open yet"))),
        }
    }

    pub fn current(&self) -> Result<&DomainSource> {
        let c = self
            .current
            .ok_or_else(|| Error::Contract("no domain opened yet".into()))?;
        self.domain(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(n: usize, v: f32) -> DomainSource {
        DomainSource::new(2, vec![v; 2 * n], Some(Labels::new(vec![0; n]))).unwrap()
    }

    #[test]
    fn stream_seals_past_domains() {
        let mut s =
            DomainStream::new(vec![source(4, 0.0), source(4, 1.0), source(4, 2.0)]).unwrap();
        assert!(s.current().is_err());
        assert_eq!(s.advance(), Some(0));
        assert_eq!(s.current().unwrap().image(0), &[0.0, 0.0]);
        assert!(s.domain(1).is_err());
        assert_eq!(s.advance(), Some(1));
        assert!(matches!(s.domain(0), Err(Error::SealedDomain(0))));
        assert_eq!(s.advance(), Some(2));
        assert_eq!(s.advance(), None);
        assert!(matches!(s.domain(2), Err(Error::SealedDomain(2))));
    }

    #[test]
    fn stream_strips_labels() {
        let mut s = DomainStream::new(vec![source(4, 0.0)]).unwrap();
        s.advance();
        assert!(s.current().unwrap().labels().is_none());
    }

    #[test]
    fn batches_drop_the_tail() {
        let src = DomainSource::new(1, (0..10).map(|v| v as f32).collect(), None).unwrap();
        let b = src.batches(4, &mut Rng::new(0)).unwrap();
        assert_eq!(b.len(), 2);
        let mut seen: Vec<f32> = b.iter().flat_map(|t| t.data().to_vec()).collect();
        seen.sort_by(f32::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn label_count_must_match() {
        assert!(DomainSource::new(2, vec![0.0; 4], Some(Labels::new(vec![0; 3]))).is_err());
        assert!(DomainSource::new(3, vec![0.0; 4], None).is_err());
    }
}
