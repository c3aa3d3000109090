use std::collections::BTreeMap;

use super::arch::{ArchitectureSpec, LayerKind, LayerSpec, Task};
use super::params::ModelParams;
use super::ModelError;
use crate::autodiff::{Graph, TensorError, Var};

/// Raw head maps for one search crop, all `S x S`.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// `[1,S,S]` classification logits.
    pub cls_logits: Var,
    /// `[1,S,S]` quality (centerness) logits.
    pub quality_logits: Var,
    /// `[4,S,S]` distances `(l, t, r, b)` in search-crop pixels, all positive.
    pub reg_offsets: Var,
}

/// Model parameters bound as leaves of one [`Graph`].
///
/// Trainable networks bind parameters with `requires_grad`; inference
/// binds them as constants so nothing is kept for differentiation.
pub struct Network<'a> {
    spec: &'a ArchitectureSpec,
    vars: BTreeMap<String, Var>,
}

impl<'a> Network<'a> {
    pub fn bind(
        g: &mut Graph,
        spec: &'a ArchitectureSpec,
        params: &ModelParams,
        trainable: bool,
    ) -> Result<Self, ModelError> {
        if params.meta.spec_hash != spec.hash() {
            return Err(super::CheckpointError::SpecHash.into());
        }
        params.validate_against(spec)?;
        let vars = params.tensors.iter().map(|(name, t)| (name.clone(), g.leaf(t.clone(), trainable))).collect();
        Ok(Self { spec, vars })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        self.spec
    }

    /// Parameter leaves by name, in sorted order.
    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, &v)| (n.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    fn wb(&self, layer: &LayerSpec) -> (Var, Var) {
        // bind() validated that every layer is present.
        (self.vars[&format!("{}.weight", layer.name)], self.vars[&format!("{}.bias", layer.name)])
    }

    fn layer(&self, g: &mut Graph, layer: &LayerSpec, x: Var) -> Result<Var, TensorError> {
        let (w, b) = self.wb(layer);
        let y = match layer.kind {
            LayerKind::Conv { stride, pad, .. } => g.conv2d(x, w, b, stride, pad)?,
            LayerKind::Linear => {
                let flat = g.flatten(x)?;
                g.linear(flat, w, b)?
            }
        };
        if layer.relu {
            g.relu(y)
        } else {
            Ok(y)
        }
    }

    fn block(&self, g: &mut Graph, layers: &[LayerSpec], mut x: Var) -> Result<Var, TensorError> {
        for l in layers {
            x = self.layer(g, l, x)?;
        }
        Ok(x)
    }

    /// Shared backbone φ applied to a `[3,n,n]` template or search crop.
    pub fn backbone_forward(&self, g: &mut Graph, crop: Var) -> Result<Var, TensorError> {
        let (c, h, w) = g.value(crop).chw()?;
        let sizes = [self.spec.template_size, self.spec.search_size];
        if c != 3 || h != w || !sizes.contains(&h) {
            return Err(TensorError::Dimension {
                op: "backbone_forward",
                detail: format!("crop {c}x{h}x{w}, expected 3x{0}x{0} or 3x{1}x{1}", sizes[0], sizes[1]),
            });
        }
        self.block(g, &self.spec.backbone, crop)
    }

    /// Splits backbone features into `(f_u, f_r) = (E1(f), E2(f))`.
    pub fn dr_split(&self, g: &mut Graph, f: Var) -> Result<(Var, Var), TensorError> {
        let f_u = self.block(g, &self.spec.dr_unrelated, f)?;
        let f_r = self.related(g, f)?;
        Ok((f_u, f_r))
    }

    /// Identity-related features `E2(f)` alone, as used at tracking time.
    pub fn related(&self, g: &mut Graph, f: Var) -> Result<Var, TensorError> {
        self.block(g, &self.spec.dr_related, f)
    }

    /// Task-specific ψ applied to template-branch identity features.
    pub fn template_kernel(&self, g: &mut Graph, f_r_z: Var, task: Task) -> Result<Var, TensorError> {
        let neck = match task {
            Task::Cls => &self.spec.neck_cls_z,
            Task::Reg => &self.spec.neck_reg_z,
        };
        self.block(g, neck, f_r_z)
    }

    /// Correlates a precomputed template kernel with search features.
    pub fn correlate(&self, g: &mut Graph, kernel: Var, f_r_x: Var, task: Task) -> Result<Var, TensorError> {
        let neck = match task {
            Task::Cls => &self.spec.neck_cls_x,
            Task::Reg => &self.spec.neck_reg_x,
        };
        let x = self.block(g, neck, f_r_x)?;
        g.depthwise_xcorr(kernel, x)
    }

    /// `ψ_z(f_r(Z)) ⋆ ψ_x(f_r(X))` for one task.
    pub fn couple(&self, g: &mut Graph, f_r_z: Var, f_r_x: Var, task: Task) -> Result<Var, TensorError> {
        let kernel = self.template_kernel(g, f_r_z, task)?;
        self.correlate(g, kernel, f_r_x, task)
    }

    pub fn head_forward(&self, g: &mut Graph, coupled_cls: Var, coupled_reg: Var) -> Result<HeadOutputs, TensorError> {
        let cls_feat = self.block(g, &self.spec.head_cls, coupled_cls)?;
        let reg_feat = self.block(g, &self.spec.head_reg, coupled_reg)?;
        let cls_logits = self.layer(g, &self.spec.cls_out, cls_feat)?;
        let quality_logits = self.layer(g, &self.spec.quality_out, cls_feat)?;
        let raw = self.layer(g, &self.spec.reg_out, reg_feat)?;
        let e = g.exp(raw)?;
        let reg_offsets = g.scale(e, self.spec.reg_scale);
        Ok(HeadOutputs { cls_logits, quality_logits, reg_offsets })
    }

    /// Full pair forward from crops to head outputs.
    pub fn track_forward(&self, g: &mut Graph, z: Var, x: Var) -> Result<HeadOutputs, TensorError> {
        let fz = self.backbone_forward(g, z)?;
        let fx = self.backbone_forward(g, x)?;
        let rz = self.related(g, fz)?;
        let rx = self.related(g, fx)?;
        let cls = self.couple(g, rz, rx, Task::Cls)?;
        let reg = self.couple(g, rz, rx, Task::Reg)?;
        self.head_forward(g, cls, reg)
    }

    /// Global discriminator score of one `(f, f̃)` pair, shape `[1]`.
    pub fn global_score(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError> {
        let joint = g.concat_channels(&[f, f_tilde])?;
        self.block(g, &self.spec.disc_global, joint)
    }

    /// Local discriminator scores of every site of `f` against a spatial
    /// summary of `f̃`, shape `[1,H,W]`.
    pub fn local_scores(&self, g: &mut Graph, f: Var, f_tilde: Var) -> Result<Var, TensorError> {
        let (_, h, w) = g.value(f).chw()?;
        let summary = g.spatial_mean(f_tilde)?;
        let tiled = g.broadcast_spatial(summary, h, w)?;
        let joint = g.concat_channels(&[f, tiled])?;
        self.block(g, &self.spec.disc_local, joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::{build_model, PruneConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ArchitectureSpec, ModelParams) {
        let spec = ArchitectureSpec::default();
        let params = build_model(&spec, PruneConfig::new(0.5).unwrap(), 1).unwrap();
        (spec, params)
    }

    #[test]
    fn template_features_are_six_by_six() {
        let (spec, params) = setup();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &spec, &params, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = g.constant(Tensor::randn(&[3, 96, 96], 1.0, &mut rng));
        let f = net.backbone_forward(&mut g, z).unwrap();
        assert_eq!(g.shape(f), [32, 6, 6]);
        let bad = g.constant(Tensor::zeros(&[3, 100, 100]));
        assert!(net.backbone_forward(&mut g, bad).is_err());
    }

    #[test]
    fn zero_template_gives_zero_response() {
        let (spec, params) = setup();
        let mut g = Graph::new();
        let net = Network::bind(&mut g, &spec, &params, false).unwrap();
        let kernel = g.constant(Tensor::zeros(&[32, 2, 2]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fx = g.constant(Tensor::randn(&[16, 26, 26], 1.0, &mut rng));
        let out = net.correlate(&mut g, kernel, fx, Task::Cls).unwrap();
        assert_eq!(g.shape(out), [32, 23, 23]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }
}
