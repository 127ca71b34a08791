use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{mnl_link, snl_link};
use super::blocks::{res_down, res_up, ResDownParams, ResUpParams, LEAKY_SLOPE};
use super::config::{ArchConfig, ArchKind};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::geom::TransformParams;
use crate::volume::Volume3;

/// Anything that maps a (fixed, moving) pair to transform parameters.
pub trait Predictor: Sync {
    fn predict(&self, fixed: &Volume3, moving: &Volume3) -> Result<TransformParams>;

    /// Prediction when the ground truth is known to the caller. Only
    /// harness-validation predictors look at `truth`.
    fn predict_with_truth(
        &self,
        fixed: &Volume3,
        moving: &Volume3,
        truth: Option<&TransformParams>,
    ) -> Result<TransformParams> {
        let _ = truth;
        self.predict(fixed, moving)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Parameter handles, grouped by role. Encoder blocks exist once and are
/// applied to both Siamese branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub encoder: Vec<ResDownParams>,
    /// `(block, W)` for each linked down block (1-based block index).
    pub links: Vec<(usize, ParamId)>,
    pub decoder: Vec<ResUpParams>,
    pub fc1: LinearParams,
    pub fc2: LinearParams,
}

/// Node handles from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `[N, 12]`.
    pub output: NodeId,
    /// Row-softmaxed attention matrices, in link order.
    pub attention: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub config: ArchConfig,
    pub params: ParamStore<T>,
    pub layout: Layout,
}

fn add_linear<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    n_in: usize,
    n_out: usize,
    gain: f64,
    rng: &mut R,
) -> LinearParams {
    let bound = (gain / n_in as f64).sqrt();
    LinearParams {
        weight: store.add(
            format!("{name}.weight"),
            Tensor::uniform(vec![n_out, n_in], bound, rng),
        ),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![n_out])),
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; `seed` overrides `config.seed`.
    pub fn build(config: &ArchConfig, seed: u64) -> Result<Self> {
        let config = config.clone().with_seed(seed);
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config.channels;
        let n = config.n_down;
        let bias = config.conv_bias;

        let mut encoder = Vec::with_capacity(n);
        for i in 1..=n {
            let c_in = if i == 1 && config.kind == ArchKind::Me {
                2 * c[0]
            } else {
                c[i - 1]
            };
            encoder.push(ResDownParams::init(
                &mut store,
                &format!("enc.{i}"),
                c_in,
                c[i],
                bias,
                &mut rng,
            ));
        }
        let links = (config.first_linked_block()..=n)
            .filter(|_| config.kind.has_links())
            .map(|i| {
                let w = Tensor::uniform(vec![c[i], c[i]], (1.0 / c[i] as f64).sqrt(), &mut rng);
                (i, store.add(format!("link.{i}.w"), w))
            })
            .collect();
        let mut decoder = Vec::with_capacity(config.n_up);
        for j in 1..=config.n_up {
            let c_in = if j == 1 { 2 * c[n] } else { c[n - j + 1] };
            decoder.push(ResUpParams::init(
                &mut store,
                &format!("dec.{j}"),
                c_in,
                2 * c[n - j],
                c[n - j],
                bias,
                &mut rng,
            ));
        }
        let head_in = match config.kind {
            ArchKind::Me => c[n],
            ArchKind::Se => 2 * c[n],
            _ => c[n - config.n_up],
        };
        let fc1 = add_linear(
            &mut store,
            "head.fc1",
            head_in,
            config.head_hidden,
            6.0,
            &mut rng,
        );
        let fc2 = add_linear(
            &mut store,
            "head.fc2",
            config.head_hidden,
            config.head_out,
            3.0,
            &mut rng,
        );
        Ok(Self {
            layout: Layout {
                encoder,
                links,
                decoder,
                fc1,
                fc2,
            },
            config,
            params: store,
        })
    }

    /// Total scalar parameters; shared Siamese weights are stored, and
    /// therefore counted, once.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    fn link_weight(&self, block: usize) -> Option<ParamId> {
        self.layout
            .links
            .iter()
            .find(|(b, _)| *b == block)
            .map(|&(_, w)| w)
    }

    /// Runs the network on `[N, 1, D, H, W]` fixed and moving batches.
    pub fn forward(&self, g: &mut Graph<T>, fixed: NodeId, moving: NodeId) -> Result<NodeId> {
        Ok(self.forward_traced(g, fixed, moving)?.output)
    }

    pub fn forward_traced(&self, g: &mut Graph<T>, fixed: NodeId, moving: NodeId) -> Result<Trace> {
        let cfg = &self.config;
        let [d, h, w] = cfg.input_shape();
        for x in [fixed, moving] {
            let s = g.shape(x);
            if s.len() != 5 || s[1] != cfg.channels[0] || s[2..] != [d, h, w] {
                return Err(Error::shape(format!(
                    "{} expects [N, {}, {d}, {h}, {w}] inputs, got {s:?}",
                    cfg.kind, cfg.channels[0]
                )));
            }
        }
        if g.shape(fixed)[0] != g.shape(moving)[0] {
            return Err(Error::shape("fixed and moving batch sizes differ"));
        }
        let store = &self.params;
        let mut attention = Vec::new();

        let pooled = if cfg.kind == ArchKind::Me {
            let mut x = g.concat(&[fixed, moving], 1)?;
            for blk in &self.layout.encoder {
                x = res_down(g, store, blk, x)?;
            }
            g.global_avg_pool(x)?
        } else {
            let (mut xf, mut xm) = (fixed, moving);
            let mut feats = Vec::with_capacity(cfg.n_down);
            for (i, blk) in self.layout.encoder.iter().enumerate() {
                xf = res_down(g, store, blk, xf)?;
                xm = res_down(g, store, blk, xm)?;
                if let Some(wid) = self.link_weight(i + 1) {
                    let wn = g.param(store, wid);
                    if cfg.kind == ArchKind::Dnet {
                        let o = mnl_link(g, xf, xm, wn)?;
                        attention.extend([o.attn_fm, o.attn_mf]);
                        xf = g.add(xf, o.m2f)?;
                        xm = g.add(xm, o.f2m)?;
                    } else {
                        let (yf, af) = snl_link(g, xf, wn)?;
                        let (ym, am) = snl_link(g, xm, wn)?;
                        attention.extend([af, am]);
                        xf = g.add(xf, yf)?;
                        xm = g.add(xm, ym)?;
                    }
                }
                feats.push((xf, xm));
            }
            if cfg.kind.has_decoder() {
                let mut x = g.concat(&[xf, xm], 1)?;
                for (j, blk) in self.layout.decoder.iter().enumerate() {
                    let (sf, sm) = feats[cfg.n_down - j - 2];
                    let skip = g.concat(&[sf, sm], 1)?;
                    x = res_up(g, store, blk, x, skip)?;
                }
                g.global_avg_pool(x)?
            } else {
                let pf = g.global_avg_pool(xf)?;
                let pm = g.global_avg_pool(xm)?;
                g.concat(&[pf, pm], 1)?
            }
        };
        let l = &self.layout;
        let (w1, b1) = (g.param(store, l.fc1.weight), g.param(store, l.fc1.bias));
        let hdn = g.linear(pooled, w1, Some(b1))?;
        let hdn = g.leaky_relu(hdn, LEAKY_SLOPE);
        let (w2, b2) = (g.param(store, l.fc2.weight), g.param(store, l.fc2.bias));
        let output = g.linear(hdn, w2, Some(b2))?;
        Ok(Trace { output, attention })
    }

    /// Stacks volumes into a `[N, 1, D, H, W]` tensor after checking their
    /// grid against the configured input size.
    pub fn batch_tensor(&self, vols: &[&Volume3]) -> Result<Tensor<T>> {
        let dims = self.config.input_shape();
        let mut data = Vec::with_capacity(vols.len() * dims.iter().product::<usize>());
        for v in vols {
            if v.dims() != dims {
                return Err(Error::shape(format!(
                    "volume {:?} does not match model input {dims:?}",
                    v.dims()
                )));
            }
            data.extend(v.data().iter().map(|&x| T::from_f64(x as f64)));
        }
        Tensor::new(vec![vols.len(), 1, dims[0], dims[1], dims[2]], data)
    }

    /// Raw 12-value predictions for a batch of pairs.
    pub fn predict_batch(
        &self,
        fixed: &[&Volume3],
        moving: &[&Volume3],
    ) -> Result<Vec<TransformParams>> {
        let mut g = Graph::new();
        let f = g.input(self.batch_tensor(fixed)?);
        let m = g.input(self.batch_tensor(moving)?);
        let out = self.forward(&mut g, f, m)?;
        let vals = g.value(out).to_f64_vec();
        vals.chunks(12).map(TransformParams::from_slice).collect()
    }
}

impl<T: Scalar> Predictor for Model<T> {
    fn predict(&self, fixed: &Volume3, moving: &Volume3) -> Result<TransformParams> {
        Ok(self.predict_batch(&[fixed], &[moving])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_params;
    use crate::synthgen::{gen_phantom, rng_for};
    use proptest::prelude::*;

    fn phantom(n: usize, seed: u64) -> Volume3 {
        gen_phantom(&mut rng_for(seed, 0), [n; 3])
    }

    #[test]
    fn toy_models_produce_twelve_outputs() {
        let f = phantom(16, 1);
        let m = phantom(16, 2);
        for kind in ArchKind::ALL {
            let model = Model::<f32>::build(&ArchConfig::toy(kind), 3).unwrap();
            let p = model.predict(&f, &m).unwrap();
            assert_eq!(p.to_array().len(), 12);
            assert!(p.to_array().iter().all(|v| v.is_finite()), "{kind}");
        }
    }

    #[test]
    fn full_dnet_has_four_link_levels() {
        let model = Model::<f32>::build(&ArchConfig::full(ArchKind::Dnet), 0).unwrap();
        let links: Vec<_> = model
            .params
            .iter()
            .filter(|(_, n, _)| n.starts_with("link."))
            .collect();
        assert_eq!(links.len(), 4);
        for (_, name, t) in links {
            assert_eq!(t.shape()[0], t.shape()[1], "{name}");
        }
        assert_eq!(model.layout.decoder.len(), 4);
        assert_eq!(model.layout.encoder.len(), 6);
    }

    #[test]
    fn se_and_sed_share_encoder_shapes() {
        let se = Model::<f32>::build(&ArchConfig::full(ArchKind::Se), 0).unwrap();
        let sed = Model::<f32>::build(&ArchConfig::full(ArchKind::Sed), 0).unwrap();
        let enc = |m: &Model<f32>| -> Vec<(String, Vec<usize>)> {
            m.params
                .iter()
                .filter(|(_, n, _)| n.starts_with("enc."))
                .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
                .collect()
        };
        assert_eq!(enc(&se), enc(&sed));
    }

    #[test]
    fn siamese_encoder_is_counted_once() {
        // one res-down block 2³ -> 1³ with channels 1 -> 2
        let cfg = ArchConfig::assemble(ArchKind::Se, vec![[2; 3], [1; 3]], vec![1, 2], 0, 0);
        let model = Model::<f32>::build(&cfg, 0).unwrap();
        let conv = |ci: usize, co: usize| ci * co * 27 + co;
        let linear = |i: usize, o: usize| i * o + o;
        let expected = conv(1, 2) + 2 * conv(2, 2) + linear(4, 128) + linear(128, 12);
        assert_eq!(model.param_count(), expected);
        assert_eq!(
            model.param_count(),
            model
                .params
                .tensors()
                .iter()
                .map(|t| t.len())
                .sum::<usize>()
        );
    }

    #[test]
    fn untrained_predictions_are_deterministic_and_asymmetric() {
        let f = phantom(16, 4);
        let m = phantom(16, 5);
        let cfg = ArchConfig::toy(ArchKind::Dnet);
        let a = Model::<f32>::build(&cfg, 9)
            .unwrap()
            .predict(&f, &m)
            .unwrap();
        let b = Model::<f32>::build(&cfg, 9)
            .unwrap()
            .predict(&f, &m)
            .unwrap();
        assert_eq!(
            a.to_array().map(f64::to_bits),
            b.to_array().map(f64::to_bits)
        );
        let swapped = Model::<f32>::build(&cfg, 9)
            .unwrap()
            .predict(&m, &f)
            .unwrap();
        assert_ne!(a.to_array(), swapped.to_array());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let model = Model::<f32>::build(&ArchConfig::toy(ArchKind::Sed), 0).unwrap();
        let v = phantom(8, 0);
        assert!(matches!(
            model.predict(&v, &v),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn attention_rows_sum_to_one_at_every_level() {
        let f = phantom(16, 6);
        let m = phantom(16, 7);
        for kind in [ArchKind::Dnet, ArchKind::SnlSed] {
            let model = Model::<f32>::build(&ArchConfig::toy(kind), 1).unwrap();
            let mut g = Graph::new();
            let fi = g.input(model.batch_tensor(&[&f]).unwrap());
            let mi = g.input(model.batch_tensor(&[&m]).unwrap());
            let trace = model.forward_traced(&mut g, fi, mi).unwrap();
            assert_eq!(trace.attention.len(), 2 * model.config.n_link);
            for a in trace.attention {
                let n = g.shape(a)[2];
                for row in g.value(a).data().chunks(n) {
                    let s: f32 = row.iter().sum();
                    assert!((s - 1.0).abs() < 1e-6, "{kind}: {s}");
                }
            }
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let cfg = ArchConfig::assemble(
            ArchKind::Dnet,
            vec![[8; 3], [4; 3], [2; 3], [1; 3]],
            vec![1, 3, 4, 4],
            1,
            2,
        );
        let mut model = Model::<f64>::build(&cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // zero biases on zero-padded borders sit exactly on the leaky kink
        for t in model.params.tensors_mut() {
            if t.shape().len() == 1 {
                *t = Tensor::uniform(t.shape().to_vec(), 0.2, &mut rng);
            }
        }
        let f = Tensor::<f64>::uniform(vec![1, 1, 8, 8, 8], 1.0, &mut rng);
        let m = Tensor::<f64>::uniform(vec![1, 1, 8, 8, 8], 1.0, &mut rng);
        let target = Tensor::<f64>::uniform(vec![1, 12], 1.0, &mut rng);
        let e = grad_check_params(
            &model.params,
            |g, store| {
                let view = Model {
                    config: model.config.clone(),
                    params: store.clone(),
                    layout: model.layout.clone(),
                };
                let (fi, mi) = (g.input(f.clone()), g.input(m.clone()));
                let y = view.forward(g, fi, mi)?;
                let t = g.input(target.clone());
                let d = g.sub(y, t)?;
                let sq = g.mul(d, d)?;
                Ok(g.sum_all(sq))
            },
            1e-5,
            60,
        )
        .unwrap();
        assert!(e < 1e-3, "end-to-end {e}");
    }

    fn valid_config() -> impl Strategy<Value = (ArchConfig, u64)> {
        (0usize..5, 2usize..5, 1usize..4, any::<u64>()).prop_flat_map(|(k, n_down, c, seed)| {
            let kind = ArchKind::ALL[k];
            let sizes = (0..=n_down)
                .map(|i| [1usize << (n_down - i); 3])
                .collect::<Vec<_>>();
            let channels = std::iter::once(1)
                .chain((1..=n_down).map(|i| c + i))
                .collect::<Vec<_>>();
            (1..n_down, 1..=n_down).prop_map(move |(n_up, n_link)| {
                (
                    ArchConfig::assemble(kind, sizes.clone(), channels.clone(), n_up, n_link),
                    seed,
                )
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn any_valid_config_yields_twelve_outputs((cfg, seed) in valid_config()) {
            let model = Model::<f32>::build(&cfg, seed).unwrap();
            let n = cfg.input_shape()[0];
            let mut g = Graph::new();
            let x = g.input(Tensor::uniform(vec![2, 1, n, n, n], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
            let y = model.forward(&mut g, x, x).unwrap();
            prop_assert_eq!(g.shape(y), &[2, 12]);
        }
    }
}
