//! Pairwise density network: shared backbone and pyramid, cross-frame
//! attention, global/shared decoders and the inflow-outflow decoder.

pub mod attention;
mod config;
mod network;
mod params;

use std::path::Path;

use crate::autograd::{Array, Tape, Var};
use crate::density::{DensityMap, MapRole};
use crate::error::{Error, Result};
use crate::image::Image;

pub use config::{BackboneKind, DcfaConfig, ModelConfig, PositionalEncoding, Variant};
pub use params::{Binder, Init, ParamStore};

const CONFIG_FILE: &str = "config.json";
const PARAMS_FILE: &str = "params.bin";

/// Six prediction maps, each `[H, W]` at input resolution. `shared_*` is
/// `None` for the direct variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    pub global_a: Array,
    pub global_b: Array,
    pub shared_a: Option<Array>,
    pub shared_b: Option<Array>,
    pub outflow_a: Array,
    pub inflow_b: Array,
}

impl ModelOutputs {
    pub fn inflow_mass(&self) -> f64 {
        self.inflow_b.sum()
    }

    pub fn outflow_mass(&self) -> f64 {
        self.outflow_a.sum()
    }

    /// Named maps in output order, skipping absent shared maps.
    pub fn maps(&self) -> Vec<(&'static str, &Array)> {
        let mut out = vec![("global_a", &self.global_a), ("global_b", &self.global_b)];
        if let (Some(a), Some(b)) = (&self.shared_a, &self.shared_b) {
            out.push(("shared_a", a));
            out.push(("shared_b", b));
        }
        out.push(("outflow_a", &self.outflow_a));
        out.push(("inflow_b", &self.inflow_b));
        out
    }

    pub fn to_density(map: &Array, role: MapRole) -> DensityMap {
        let (h, w) = (map.dim(0), map.dim(1));
        DensityMap::from_vec(h, w, 1, role, map.data().iter().map(|&v| v as f32).collect())
            .expect("map size matches")
    }
}

/// Prediction maps on a tape, each `[1, H, W]`.
#[derive(Clone, Copy)]
pub struct TapeOutputs<'t> {
    pub global_a: Var<'t>,
    pub global_b: Var<'t>,
    pub shared_a: Option<Var<'t>>,
    pub shared_b: Option<Var<'t>>,
    pub outflow_a: Var<'t>,
    pub inflow_b: Var<'t>,
}

impl TapeOutputs<'_> {
    pub fn to_arrays(&self) -> ModelOutputs {
        let plane = |v: Var<'_>| {
            let a = (*v.value()).clone();
            let (h, w) = (a.dim(1), a.dim(2));
            a.reshaped(&[h, w])
        };
        ModelOutputs {
            global_a: plane(self.global_a),
            global_b: plane(self.global_b),
            shared_a: self.shared_a.map(plane),
            shared_b: self.shared_b.map(plane),
            outflow_a: plane(self.outflow_a),
            inflow_b: plane(self.inflow_b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

/// Zero-pads `[C, H, W]` on the right and bottom.
fn pad_chw(x: &Array, h: usize, w: usize) -> Array {
    let (c, ih, iw) = (x.dim(0), x.dim(1), x.dim(2));
    if (ih, iw) == (h, w) {
        return x.clone();
    }
    let mut out = Array::zeros(&[c, h, w]);
    for ch in 0..c {
        for r in 0..ih {
            let src = &x.data()[(ch * ih + r) * iw..(ch * ih + r + 1) * iw];
            out.data_mut()[(ch * h + r) * w..(ch * h + r) * w + iw].copy_from_slice(src);
        }
    }
    out
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

impl Model {
    /// Builds the model with freshly initialized weights. For the SCFA
    /// variant an unset MLP width is resolved to match the DCFA build's
    /// parameter count.
    pub fn new(mut config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if config.dcfa.variant == Variant::Scfa && config.scfa_mlp_hidden.is_none() {
            config.scfa_mlp_hidden = Some(Self::matched_scfa_hidden(&config)?);
        }
        let params = Self::init_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Model::new(config.clone())?;
        if !fresh.params.same_layout(&params) {
            return Err(Error::Config(
                "parameter names or shapes do not match the configuration".into(),
            ));
        }
        Ok(Self {
            config: fresh.config,
            params,
        })
    }

    fn init_params(config: &ModelConfig) -> Result<ParamStore> {
        let tape = Tape::new();
        let binder = Binder::init(&tape, config.seed);
        let side = config.size_multiple();
        let dummy = tape.constant(Array::zeros(&[3, side, side]));
        Self::forward_graph(config, &binder, dummy, dummy)?;
        Ok(binder.into_store())
    }

    fn matched_scfa_hidden(config: &ModelConfig) -> Result<usize> {
        let mut dcfa = config.clone();
        dcfa.dcfa.variant = Variant::Dcfa;
        dcfa.dcfa.n_units = config.n_levels;
        let target = Self::init_params(&dcfa)?.count() as f64;
        let count = |h: usize| -> Result<f64> {
            let mut c = config.clone();
            c.scfa_mlp_hidden = Some(h);
            Ok(Self::init_params(&c)?.count() as f64)
        };
        let (c1, c2) = (count(1)?, count(2)?);
        let slope = c2 - c1;
        let h = ((target - c1) / slope).round() as i64 + 1;
        Ok(h.max(1) as usize)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let m = self.config.size_multiple();
        if h < m || w < m {
            return Err(Error::Shape(format!(
                "image {w}x{h} is smaller than the minimum {m}x{m}"
            )));
        }
        Ok(())
    }

    /// The network on one pair of padded `[3, H, W]` inputs.
    fn forward_graph<'t>(
        config: &ModelConfig,
        b: &Binder<'t, '_>,
        a: Var<'t>,
        bb: Var<'t>,
    ) -> Result<TapeOutputs<'t>> {
        let pa = network::pyramid(config, b, a);
        let pb = network::pyramid(config, b, bb);
        let ga = network::global_feature(config, b, &pa);
        let gb = network::global_feature(config, b, &pb);
        let (sa, sb) = match config.dcfa.variant {
            Variant::Dcfa | Variant::Direct => (
                network::dcfa(config, b, &pa, &pb)?,
                network::dcfa(config, b, &pb, &pa)?,
            ),
            Variant::Scfa => {
                let h = config
                    .scfa_mlp_hidden
                    .unwrap_or(config.channels * config.dcfa.mlp_ratio);
                (
                    network::scfa(config, b, ga, gb, h)?,
                    network::scfa(config, b, gb, ga, h)?,
                )
            }
        };
        let global_a = network::decoder(config, b, "decoder.global", ga);
        let global_b = network::decoder(config, b, "decoder.global", gb);
        Ok(match config.dcfa.variant {
            Variant::Direct => TapeOutputs {
                global_a,
                global_b,
                shared_a: None,
                shared_b: None,
                outflow_a: network::decoder(config, b, "decoder.flow", sa),
                inflow_b: network::decoder(config, b, "decoder.flow", sb),
            },
            _ => {
                let shared_a = network::decoder(config, b, "decoder.shared", sa);
                let shared_b = network::decoder(config, b, "decoder.shared", sb);
                TapeOutputs {
                    global_a,
                    global_b,
                    shared_a: Some(shared_a),
                    shared_b: Some(shared_b),
                    outflow_a: network::dio(config, b, global_a.sub(shared_a)),
                    inflow_b: network::dio(config, b, global_b.sub(shared_b)),
                }
            }
        })
    }

    /// Forward pass on `[3, H, W]` inputs bound to `binder`'s tape. Inputs
    /// are padded to the size multiple and outputs cropped back.
    pub fn forward_tape<'t>(
        &self,
        binder: &Binder<'t, '_>,
        image_a: &Array,
        image_b: &Array,
    ) -> Result<TapeOutputs<'t>> {
        if image_a.shape() != image_b.shape() {
            return Err(Error::Input(format!(
                "frame shapes differ: {:?} vs {:?}",
                image_a.shape(),
                image_b.shape()
            )));
        }
        if image_a.shape().len() != 3 || image_a.dim(0) != 3 {
            return Err(Error::Input(format!("expected [3, H, W], got {:?}", image_a.shape())));
        }
        let (h, w) = (image_a.dim(1), image_a.dim(2));
        self.check_size(h, w)?;
        let m = self.config.size_multiple();
        let (ph, pw) = (round_up(h, m), round_up(w, m));
        let tape = binder.tape();
        let a = tape.constant(pad_chw(image_a, ph, pw));
        let b = tape.constant(pad_chw(image_b, ph, pw));
        let out = Self::forward_graph(&self.config, binder, a, b)?;
        let crop = |v: Var<'t>| v.crop(h, w);
        Ok(TapeOutputs {
            global_a: crop(out.global_a),
            global_b: crop(out.global_b),
            shared_a: out.shared_a.map(crop),
            shared_b: out.shared_b.map(crop),
            outflow_a: crop(out.outflow_a),
            inflow_b: crop(out.inflow_b),
        })
    }

    pub fn forward(&self, image_a: &Image, image_b: &Image) -> Result<ModelOutputs> {
        self.forward_arrays(&image_a.to_chw(), &image_b.to_chw())
    }

    pub fn forward_arrays(&self, image_a: &Array, image_b: &Array) -> Result<ModelOutputs> {
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &self.params, false);
        Ok(self.forward_tape(&binder, image_a, image_b)?.to_arrays())
    }

    /// Pyramid levels of one image (padded as in [`Model::forward`]).
    pub fn extract_pyramid(&self, image: &Image) -> Result<Vec<Array>> {
        let (h, w) = (image.height(), image.width());
        self.check_size(h, w)?;
        let m = self.config.size_multiple();
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &self.params, false);
        let x = tape.constant(pad_chw(&image.to_chw(), round_up(h, m), round_up(w, m)));
        Ok(network::pyramid(&self.config, &binder, x)
            .into_iter()
            .map(|v| (*v.value()).clone())
            .collect())
    }

    /// Global density map of a single frame, `[H, W]`.
    pub fn global_map(&self, image: &Image) -> Result<Array> {
        let (h, w) = (image.height(), image.width());
        self.check_size(h, w)?;
        let m = self.config.size_multiple();
        let tape = Tape::new();
        let binder = Binder::bind(&tape, &self.params, false);
        let x = tape.constant(pad_chw(&image.to_chw(), round_up(h, m), round_up(w, m)));
        let levels = network::pyramid(&self.config, &binder, x);
        let g = network::global_feature(&self.config, &binder, &levels);
        let map = network::decoder(&self.config, &binder, "decoder.global", g).crop(h, w);
        Ok((*map.value()).clone().reshaped(&[h, w]))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join(CONFIG_FILE);
        std::fs::write(&cfg, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&cfg, e))?;
        self.params.save(dir.join(PARAMS_FILE))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg_path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        let params = ParamStore::load(dir.join(PARAMS_FILE))?;
        Self::from_parts(config, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let data = (0..w * h * 3)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 40) as f32 / (1u64 << 24) as f32
            })
            .collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn pyramid_shapes() {
        let cfg = ModelConfig {
            n_levels: 3,
            channels: 32,
            ..ModelConfig::tiny()
        };
        let cfg = ModelConfig {
            dcfa: DcfaConfig {
                n_units: 3,
                ..cfg.dcfa.clone()
            },
            ..cfg
        };
        let model = Model::new(cfg).unwrap();
        let levels = model.extract_pyramid(&noise_image(64, 64, 1)).unwrap();
        let shapes: Vec<&[usize]> = levels.iter().map(|l| l.shape()).collect();
        assert_eq!(shapes, vec![&[32, 16, 16][..], &[32, 8, 8], &[32, 4, 4]]);
        let padded = model.extract_pyramid(&noise_image(64, 63, 1)).unwrap();
        assert_eq!(padded[0].shape(), &[32, 16, 16]);
        assert!(matches!(
            model.extract_pyramid(&noise_image(8, 64, 1)),
            Err(Error::Shape(m)) if m.contains("16x16")
        ));
    }

    #[test]
    fn six_maps_at_input_resolution() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let out = model
            .forward(&noise_image(40, 24, 2), &noise_image(40, 24, 3))
            .unwrap();
        assert_eq!(out.maps().len(), 6);
        for (_, m) in out.maps() {
            assert_eq!(m.shape(), &[24, 40]);
            assert!(m.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn decoders_share_layout_not_weights() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let p = model.params();
        let g: Vec<_> = p.iter().filter(|(n, _)| n.starts_with("decoder.global.")).collect();
        let s: Vec<_> = p.iter().filter(|(n, _)| n.starts_with("decoder.shared.")).collect();
        assert_eq!(g.len(), s.len());
        for ((ng, ag), (ns, as_)) in g.iter().zip(&s) {
            assert_eq!(ng.trim_start_matches("decoder.global"), ns.trim_start_matches("decoder.shared"));
            assert_eq!(ag.shape(), as_.shape());
        }
        assert_ne!(p.get("decoder.global.stage0.weight"), p.get("decoder.shared.stage0.weight"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::tiny()).unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(Model::load(dir.path()).unwrap(), model);
    }

    #[test]
    fn direct_variant_omits_shared_maps() {
        let model = Model::new(ModelConfig::tiny().with_variant(Variant::Direct)).unwrap();
        let img = noise_image(32, 32, 4);
        let out = model.forward(&img, &img).unwrap();
        assert!(out.shared_a.is_none());
        assert_eq!(out.outflow_a, out.inflow_b);
        assert!(model.params().get("dio.conv0.weight").is_none());
    }
}
