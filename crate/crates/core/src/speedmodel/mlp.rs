use std::path::Path;

use rand::Rng;

use crate::container::Container;
use crate::diffcore::{Graph, NodeId, Tensor4};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SRNASSPD";
pub const FORMAT_VERSION: u32 = 1;

/// Input conditioning stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationSpec {
    /// One divisor per width entry (the configured width caps).
    pub divisors: Vec<f64>,
    /// Network output is multiplied by this to give milliseconds.
    pub latency_scale: f64,
}

impl NormalizationSpec {
    pub fn from_maxima(maxima: &[usize]) -> Self {
        Self {
            divisors: maxima.iter().map(|&m| m as f64).collect(),
            latency_scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.divisors.is_empty() || self.divisors.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument(format!("divisors must be positive: {:?}", self.divisors)));
        }
        if !(self.latency_scale.is_finite() && self.latency_scale > 0.0) {
            return Err(Error::InvalidArgument("latency scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T> {
    /// `(out, in)`.
    pub weight: Tensor4<T>,
    /// `(out)`.
    pub bias: Tensor4<T>,
}

/// Fully-connected ReLU regressor from block widths to per-block latency.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedMLP<T> {
    layers: Vec<LinearLayer<T>>,
    norm: NormalizationSpec,
}

/// Node ids of the layer parameters once registered on a tape.
#[derive(Clone, Debug)]
pub struct SpeedIds {
    layers: Vec<(NodeId, NodeId)>,
}

impl SpeedIds {
    pub fn all(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<T> {
    pub ms: T,
    /// Some width fell outside `[1, cap]` and was clamped.
    pub clamped: bool,
}

pub const DEFAULT_HIDDEN: [usize; 5] = [64, 128, 128, 64, 32];

impl<T: Scalar> SpeedMLP<T> {
    /// Randomly initialized network; `hidden` lists the hidden widths, so
    /// `hidden.len() + 1` linear layers are built.
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], norm: NormalizationSpec, rng: &mut R) -> Result<Self> {
        norm.validate()?;
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden widths must be >= 1".into()));
        }
        let mut dims = vec![norm.divisors.len()];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (inp, out) = (d[0], d[1]);
                let bound = (6.0 / inp as f64).sqrt();
                LinearLayer {
                    weight: Tensor4::uniform([out, inp, 1, 1], -bound, bound, rng).trainable(),
                    bias: Tensor4::zeros([out, 1, 1, 1]).trainable(),
                }
            })
            .collect();
        Ok(Self { layers, norm })
    }

    pub fn from_layers(layers: Vec<LinearLayer<T>>, norm: NormalizationSpec) -> Result<Self> {
        norm.validate()?;
        let mut inp = norm.divisors.len();
        for (i, l) in layers.iter().enumerate() {
            let [o, li, ..] = l.weight.shape();
            if li != inp || l.bias.len() != o || l.weight.len() != o * li {
                return Err(Error::shape("SpeedMLP", format!("layer {i} has shape {:?}", l.weight.shape())));
            }
            inp = o;
        }
        if inp != 1 || layers.is_empty() {
            return Err(Error::shape("SpeedMLP", "network must end in a single output"));
        }
        Ok(Self { layers, norm })
    }

    pub fn arity(&self) -> usize {
        self.norm.divisors.len()
    }

    pub fn norm(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn layers(&self) -> &[LinearLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer<T>] {
        &mut self.layers
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Records the weights on `g`; frozen weights enter as constants so that
    /// only the inputs receive gradients.
    pub fn register(&self, g: &mut Graph<T>, trainable: bool) -> SpeedIds {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (g.leaf(&l.weight), g.leaf(&l.bias))
                } else {
                    (g.constant(&l.weight), g.constant(&l.bias))
                }
            })
            .collect();
        SpeedIds { layers }
    }

    /// Predicted ms for a `(rows, arity)` width matrix on the tape. Inputs
    /// are clamped to the sampled range `[1, cap]` and divided by the caps.
    pub fn forward_node(&self, g: &mut Graph<T>, ids: &SpeedIds, widths: NodeId) -> Result<NodeId> {
        let shape = g.shape(widths);
        let n = shape.iter().product::<usize>();
        let rows = shape[0];
        if n != rows * self.arity() && !(rows == 1 && n == self.arity()) {
            return Err(Error::shape(
                "speed_predict",
                format!("expected {} width entries per row, got shape {shape:?}", self.arity()),
            ));
        }
        let divisors: Vec<T> = self.norm.divisors.iter().map(|&d| T::of(d)).collect();
        let mut x = g.clamp(widths, T::one(), T::infinity());
        x = g.div_const(x, &divisors)?;
        x = g.clamp(x, T::zero(), T::one());
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in ids.layers.iter().enumerate() {
            x = g.linear(x, w, b)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(g.scale(x, T::of(self.norm.latency_scale)))
    }

    fn widths_node(&self, g: &mut Graph<T>, widths: &[T], trainable: bool) -> Result<NodeId> {
        if widths.len() != self.arity() {
            return Err(Error::shape(
                "speed_predict",
                format!("expected {} widths, got {}", self.arity(), widths.len()),
            ));
        }
        let mut t = Tensor4::from_vec([1, widths.len(), 1, 1], widths.to_vec())?;
        t.requires_grad = trainable;
        Ok(g.leaf(&t))
    }

    fn clamped(&self, widths: &[T]) -> bool {
        widths.iter().zip(&self.norm.divisors).any(|(&w, &d)| {
            let w = w.to_f64_lossy();
            w < 1.0 || w > d
        })
    }

    pub fn predict(&self, widths: &[T]) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let x = self.widths_node(&mut g, widths, false)?;
        let ids = self.register(&mut g, false);
        let y = self.forward_node(&mut g, &ids, x)?;
        let clamped = self.clamped(widths);
        if clamped {
            log::debug!("speed model input {widths:?} clamped to [1, {:?}]", self.norm.divisors);
        }
        Ok(Prediction { ms: g.item(y), clamped })
    }

    /// Predictions for many configurations in one pass.
    pub fn predict_batch(&self, rows: &[[T; 4]]) -> Result<Vec<T>> {
        if self.arity() != 4 {
            return Err(Error::shape("predict_batch", format!("model arity {}", self.arity())));
        }
        let mut g = Graph::new();
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let x = g.constant(&Tensor4::from_vec([rows.len(), 4, 1, 1], flat)?);
        let ids = self.register(&mut g, false);
        let y = self.forward_node(&mut g, &ids, x)?;
        Ok(g.value(y).to_vec())
    }

    /// `∂ predict / ∂ widths` from the reverse pass.
    pub fn grad_wrt_widths(&self, widths: &[T]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let x = self.widths_node(&mut g, widths, true)?;
        let ids = self.register(&mut g, false);
        let y = self.forward_node(&mut g, &ids, x)?;
        g.backward(y)?;
        Ok(g.grad(x).map(|v| v.to_vec()).unwrap_or_else(|| vec![T::zero(); widths.len()]))
    }

    pub fn cast<U: Scalar>(&self) -> SpeedMLP<U> {
        SpeedMLP {
            layers: self
                .layers
                .iter()
                .map(|l| LinearLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            norm: self.norm.clone(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set("kind", "speed-mlp");
        c.set("layers", self.layers.len());
        c.set("divisors", self.norm.divisors.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
        c.set("latency_scale", self.norm.latency_scale);
        for (i, l) in self.layers.iter().enumerate() {
            c.push(format!("layer{i}.weight"), &l.weight);
            c.push(format!("layer{i}.bias"), &l.bias);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind")? != "speed-mlp" {
            return Err(Error::InvalidArgument("not a speed model container".into()));
        }
        let n: usize = c.get_parsed("layers")?;
        let divisors = c
            .get("divisors")?
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad divisor `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let norm = NormalizationSpec {
            divisors,
            latency_scale: c.get_parsed("latency_scale")?,
        };
        let mut rd = c.reader();
        let layers = (0..n)
            .map(|i| {
                Ok(LinearLayer {
                    weight: rd.next::<T>(&format!("layer{i}.weight"))?.trainable(),
                    bias: rd.next::<T>(&format!("layer{i}.bias"))?.trainable(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rd.finish()?;
        Self::from_layers(layers, norm)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes(MAGIC, FORMAT_VERSION)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes, MAGIC, FORMAT_VERSION, "speed model")?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path, MAGIC, FORMAT_VERSION)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MAGIC, FORMAT_VERSION, "speed model")?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> SpeedMLP<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        SpeedMLP::new(&DEFAULT_HIDDEN, NormalizationSpec::from_maxima(&[16, 64, 48, 16]), &mut rng).unwrap()
    }

    #[test]
    fn six_layers_with_expected_widths() {
        let m = model();
        let shapes: Vec<_> = m.layers().iter().map(|l| l.weight.shape()).collect();
        assert_eq!(
            shapes,
            vec![[64, 4, 1, 1], [128, 64, 1, 1], [128, 128, 1, 1], [64, 128, 1, 1], [32, 64, 1, 1], [1, 32, 1, 1]]
        );
    }

    #[test]
    fn arity_and_clamp_flag() {
        let m = model();
        assert!(m.predict(&[1.0, 2.0, 3.0]).is_err());
        assert!(!m.predict(&[16.0, 64.0, 48.0, 16.0]).unwrap().clamped);
        let over = m.predict(&[16.0, 80.0, 48.0, 16.0]).unwrap();
        assert!(over.clamped);
        assert_eq!(over.ms, m.predict(&[16.0, 64.0, 48.0, 16.0]).unwrap().ms);
        let under = m.predict(&[16.0, 0.0, 48.0, 16.0]).unwrap();
        assert!(under.clamped);
        assert_eq!(under.ms, m.predict(&[16.0, 1.0, 48.0, 16.0]).unwrap().ms);
        let g = m.grad_wrt_widths(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_model_has_zero_gradient() {
        let mut m = model();
        for l in m.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let last = m.layers_mut().last_mut().unwrap();
        last.bias.data_mut()[0] = 3.0;
        assert_eq!(m.predict(&[5.0, 6.0, 7.0, 8.0]).unwrap().ms, 3.0);
        assert_eq!(m.grad_wrt_widths(&[5.0, 6.0, 7.0, 8.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn bytes_round_trip() {
        let m = model();
        let back = SpeedMLP::<f64>::from_bytes(&m.to_bytes()).unwrap();
        let w = [3.0, 17.5, 20.0, 9.0];
        assert_eq!(m.predict(&w).unwrap().ms.to_bits(), back.predict(&w).unwrap().ms.to_bits());
        let batch = m.predict_batch(&[w, [1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(batch[0], m.predict(&w).unwrap().ms);
    }
}
