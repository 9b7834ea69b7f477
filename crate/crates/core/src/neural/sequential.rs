use super::layer::{Cache, Layer};
use super::tensor::{Real, Tensor2D};
use crate::error::{Error, Result};

/// Parameter gradients, one flat vector per layer.
pub type Gradients<T> = Vec<Vec<T>>;

/// A stack of layers applied in order, with reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    caches: Option<Vec<Cache<T>>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].kind().outputs() != pair[1].kind().inputs() {
                return Err(Error::shape(format!(
                    "{:?} cannot feed {:?}",
                    pair[0].kind(),
                    pair[1].kind()
                )));
            }
        }
        Ok(Self {
            layers,
            caches: None,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.layers.iter().map(|l| vec![T::zero(); l.param_count()]).collect()
    }

    /// Inference forward; nothing is recorded.
    pub fn predict(&self, x: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Forward pass recording every layer's cache for [`Sequential::backward`].
    pub fn forward(&mut self, x: &Tensor2D<T>) -> Result<Tensor2D<T>> {
        let (y, caches) = self.forward_record(x)?;
        self.caches = Some(caches);
        Ok(y)
    }

    /// Gradients of the recorded forward pass given the output gradient `dy`.
    /// Consumes the recording; returns parameter and input gradients.
    pub fn backward(&mut self, dy: &Tensor2D<T>) -> Result<(Gradients<T>, Tensor2D<T>)> {
        let caches = self
            .caches
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let mut grads = self.zero_gradients();
        let dx = self.backward_record(&caches, dy, &mut grads)?;
        Ok((grads, dx))
    }

    /// Stateless forward returning the caches instead of storing them, so
    /// several sequences can be in flight at once.
    pub fn forward_record(&self, x: &Tensor2D<T>) -> Result<(Tensor2D<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let cache = layer.forward_train(&cur)?;
            cur = output_of(&cache);
            caches.push(cache);
        }
        Ok((cur, caches))
    }

    /// Accumulates gradients for caches produced by [`Sequential::forward_record`].
    pub fn backward_record(
        &self,
        caches: &[Cache<T>],
        dy: &Tensor2D<T>,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor2D<T>> {
        if caches.len() != self.layers.len() || grads.len() != self.layers.len() {
            return Err(Error::State("caches do not match this stack".into()));
        }
        let mut d = dy.clone();
        for ((layer, cache), g) in self.layers.iter().zip(caches).zip(grads.iter_mut()).rev() {
            d = layer.backward(cache, &d, g)?;
        }
        Ok(d)
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(Layer::cast).collect(),
            caches: None,
        }
    }
}

/// Output tensor held in a cache.
pub fn output_of<T: Real>(cache: &Cache<T>) -> Tensor2D<T> {
    match cache {
        Cache::Dense { y, .. } | Cache::Conv1d { y, .. } => y.clone(),
        Cache::Gru { h, .. } => {
            let cols = h.cols();
            Tensor2D::from_vec(h.rows() - 1, cols, h.data()[cols..].to_vec()).expect("shape")
        }
    }
}
