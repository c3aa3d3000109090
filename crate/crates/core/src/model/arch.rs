use sha2::{Digest, Sha256};

use super::ModelError;

/// A channel count, optionally subject to global pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Width {
    Fixed(usize),
    Prunable(usize),
}

impl Width {
    pub fn base(self) -> usize {
        match self {
            Width::Fixed(n) | Width::Prunable(n) => n,
        }
    }

    /// Pruned channel count: round half up, never below one channel.
    pub fn resolve(self, mu: f64) -> usize {
        match self {
            Width::Fixed(n) => n,
            Width::Prunable(n) => prune_channels(n, mu),
        }
    }
}

/// `max(1, round_half_up(n * (1 - mu)))`. A small epsilon keeps exact
/// halves such as `5 * 0.7 = 3.5` from rounding down through binary
/// representation error.
pub fn prune_channels(n: usize, mu: f64) -> usize {
    let kept = n as f64 * (1.0 - mu);
    ((kept + 0.5 + 1e-9).floor() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Fully connected over the flattened input.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Channel groups concatenated to form the input.
    pub inputs: Vec<Width>,
    /// Spatial positions per input channel (flattened linear inputs only).
    pub in_spatial: usize,
    pub out: Width,
    pub relu: bool,
}

impl LayerSpec {
    fn conv(name: &str, input: Width, out: Width, kernel: usize, stride: usize, pad: usize, relu: bool) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv { kernel, stride, pad },
            inputs: vec![input],
            in_spatial: 1,
            out,
            relu,
        }
    }

    pub fn in_channels(&self, mu: f64) -> usize {
        self.inputs.iter().map(|w| w.resolve(mu)).sum::<usize>() * self.in_spatial
    }

    pub fn out_channels(&self, mu: f64) -> usize {
        self.out.resolve(mu)
    }

    pub fn weight_shape(&self, mu: f64) -> Vec<usize> {
        let (cin, cout) = (self.in_channels(mu), self.out_channels(mu));
        match self.kind {
            LayerKind::Conv { kernel, .. } => vec![cout, cin, kernel, kernel],
            LayerKind::Linear => vec![cout, cin],
        }
    }

    pub fn param_count(&self, mu: f64) -> usize {
        self.weight_shape(mu).iter().product::<usize>() + self.out_channels(mu)
    }

    pub fn fan_in(&self, mu: f64) -> usize {
        self.weight_shape(mu)[1..].iter().product()
    }

    /// Output extent for a square input of side `n`.
    pub fn out_extent(&self, n: usize) -> Option<usize> {
        match self.kind {
            LayerKind::Conv { kernel, stride, pad } => {
                let padded = n + 2 * pad;
                (padded >= kernel).then(|| (padded - kernel) / stride + 1)
            }
            LayerKind::Linear => Some(1),
        }
    }
}

/// One backbone convolution: `(width, kernel, stride, pad)`.
pub type BackboneLayer = (usize, usize, usize, usize);

/// Tunable sizes of the network family.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub template_size: usize,
    pub search_size: usize,
    pub backbone: Vec<BackboneLayer>,
    pub dr_width: usize,
    pub neck_width: usize,
    pub head_width: usize,
    pub disc_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            template_size: 96,
            search_size: 256,
            backbone: vec![(32, 5, 2, 0), (64, 3, 2, 0), (96, 3, 2, 0), (96, 3, 1, 0), (64, 3, 1, 0)],
            dr_width: 32,
            neck_width: 64,
            head_width: 64,
            disc_hidden: 64,
        }
    }
}

/// Which task a neck/correlation branch serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Cls,
    Reg,
}

/// Layer-by-layer description of every block of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub template_size: usize,
    pub search_size: usize,
    pub total_stride: usize,
    /// Pixel scale applied to the exponentiated regression outputs.
    pub reg_scale: f64,
    pub backbone: Vec<LayerSpec>,
    /// E1: identity-unrelated encoder.
    pub dr_unrelated: Vec<LayerSpec>,
    /// E2: identity-related encoder.
    pub dr_related: Vec<LayerSpec>,
    pub neck_cls_z: Vec<LayerSpec>,
    pub neck_cls_x: Vec<LayerSpec>,
    pub neck_reg_z: Vec<LayerSpec>,
    pub neck_reg_x: Vec<LayerSpec>,
    pub head_cls: Vec<LayerSpec>,
    pub head_reg: Vec<LayerSpec>,
    pub cls_out: LayerSpec,
    pub quality_out: LayerSpec,
    pub reg_out: LayerSpec,
    pub disc_global: Vec<LayerSpec>,
    pub disc_local: Vec<LayerSpec>,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self::from_config(&ArchConfig::default()).expect("default architecture is valid")
    }
}

impl ArchitectureSpec {
    pub fn from_config(cfg: &ArchConfig) -> Result<Self, ModelError> {
        if cfg.backbone.is_empty() {
            return Err(ModelError::Config("backbone needs at least one layer".into()));
        }
        let mut backbone = Vec::new();
        let mut prev = Width::Fixed(3);
        for (i, &(width, kernel, stride, pad)) in cfg.backbone.iter().enumerate() {
            let out = Width::Prunable(width);
            backbone.push(LayerSpec::conv(&format!("backbone.conv{}", i + 1), prev, out, kernel, stride, pad, true));
            prev = out;
        }
        let feat = prev;
        let dr = Width::Prunable(cfg.dr_width);
        let neck = Width::Prunable(cfg.neck_width);
        let head = Width::Prunable(cfg.head_width);
        let hidden = Width::Prunable(cfg.disc_hidden);
        let total_stride = cfg.backbone.iter().map(|l| l.2).product();

        let encoder = |name: &str| vec![LayerSpec::conv(&format!("{name}.conv1"), feat, dr, 3, 1, 1, true)];
        let neck_layer = |name: &str| vec![LayerSpec::conv(&format!("{name}.conv"), dr, neck, 3, 1, 0, false)];
        let tower = |name: &str| vec![LayerSpec::conv(&format!("{name}.conv1"), neck, head, 3, 1, 1, true)];

        let mut spec = Self {
            template_size: cfg.template_size,
            search_size: cfg.search_size,
            total_stride,
            reg_scale: total_stride as f64,
            backbone,
            dr_unrelated: encoder("dr_unrelated"),
            dr_related: encoder("dr_related"),
            neck_cls_z: neck_layer("neck_cls_z"),
            neck_cls_x: neck_layer("neck_cls_x"),
            neck_reg_z: neck_layer("neck_reg_z"),
            neck_reg_x: neck_layer("neck_reg_x"),
            head_cls: tower("head_cls"),
            head_reg: tower("head_reg"),
            cls_out: LayerSpec::conv("head_cls.out", head, Width::Fixed(1), 1, 1, 0, false),
            quality_out: LayerSpec::conv("head_quality.out", head, Width::Fixed(1), 1, 1, 0, false),
            reg_out: LayerSpec::conv("head_reg.out", head, Width::Fixed(4), 1, 1, 0, false),
            disc_global: Vec::new(),
            disc_local: vec![
                LayerSpec {
                    name: "disc_local.conv1".into(),
                    kind: LayerKind::Conv { kernel: 1, stride: 1, pad: 0 },
                    inputs: vec![feat, dr, dr],
                    in_spatial: 1,
                    out: hidden,
                    relu: true,
                },
                LayerSpec::conv("disc_local.conv2", hidden, Width::Fixed(1), 1, 1, 0, false),
            ],
        };
        let tf = spec.template_feature_size()?;
        spec.disc_global = vec![
            LayerSpec {
                name: "disc_global.fc1".into(),
                kind: LayerKind::Linear,
                inputs: vec![feat, dr, dr],
                in_spatial: tf * tf,
                out: hidden,
                relu: true,
            },
            LayerSpec {
                name: "disc_global.fc2".into(),
                kind: LayerKind::Linear,
                inputs: vec![hidden],
                in_spatial: 1,
                out: Width::Fixed(1),
                relu: false,
            },
        ];
        spec.validate()?;
        Ok(spec)
    }

    fn chain_extent(layers: &[LayerSpec], n: usize) -> Option<usize> {
        layers.iter().try_fold(n, |n, l| l.out_extent(n).filter(|&e| e > 0))
    }

    /// Spatial side of the backbone feature map for an input of side `n`.
    pub fn backbone_extent(&self, n: usize) -> Option<usize> {
        Self::chain_extent(&self.backbone, n)
    }

    pub fn template_feature_size(&self) -> Result<usize, ModelError> {
        self.backbone_extent(self.template_size)
            .filter(|&e| e >= 3)
            .ok_or_else(|| ModelError::Config(format!("template size {} too small for backbone", self.template_size)))
    }

    pub fn search_feature_size(&self) -> Result<usize, ModelError> {
        self.backbone_extent(self.search_size)
            .ok_or_else(|| ModelError::Config(format!("search size {} too small for backbone", self.search_size)))
    }

    /// Side of the score map produced by the heads.
    pub fn score_size(&self) -> Result<usize, ModelError> {
        let z = Self::chain_extent(
            &self.neck_cls_z,
            Self::chain_extent(&self.dr_related, self.template_feature_size()?).unwrap_or(0),
        );
        let x = Self::chain_extent(
            &self.neck_cls_x,
            Self::chain_extent(&self.dr_related, self.search_feature_size()?).unwrap_or(0),
        );
        match (z, x) {
            (Some(z), Some(x)) if x >= z => Ok(x - z + 1),
            _ => Err(ModelError::Config("search features smaller than template features".into())),
        }
    }

    /// Search-crop coordinate of score-map cell 0; cells are `total_stride` apart
    /// and the map is centred on the crop.
    pub fn score_offset(&self) -> Result<f64, ModelError> {
        let s = self.score_size()?;
        Ok(self.search_size as f64 / 2.0 - (s as f64 - 1.0) / 2.0 * self.total_stride as f64)
    }

    /// Every layer in canonical order.
    pub fn layers(&self) -> Vec<&LayerSpec> {
        let blocks: [&[LayerSpec]; 13] = [
            &self.backbone,
            &self.dr_unrelated,
            &self.dr_related,
            &self.neck_cls_z,
            &self.neck_cls_x,
            &self.neck_reg_z,
            &self.neck_reg_x,
            &self.head_cls,
            &self.head_reg,
            std::slice::from_ref(&self.cls_out),
            std::slice::from_ref(&self.quality_out),
            std::slice::from_ref(&self.reg_out),
            &self.disc_global,
        ];
        blocks.into_iter().flatten().chain(self.disc_local.iter()).collect()
    }

    /// Layers used at tracking time (no discriminators, no E1).
    pub fn is_training_only(name: &str) -> bool {
        name.starts_with("disc_") || name.starts_with("dr_unrelated")
    }

    pub fn param_count(&self, mu: f64) -> usize {
        self.layers().iter().map(|l| l.param_count(mu)).sum()
    }

    fn check_chain(name: &str, layers: &[LayerSpec], input: &[Width]) -> Result<Width, ModelError> {
        let mut expect = input.to_vec();
        for l in layers {
            if l.inputs != expect {
                return Err(ModelError::Config(format!(
                    "{name}: layer {} takes {:?} but receives {:?}",
                    l.name, l.inputs, expect
                )));
            }
            expect = vec![l.out];
        }
        Ok(expect[0])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for l in self.layers() {
            if l.out.base() == 0 || l.inputs.iter().any(|w| w.base() == 0) {
                return Err(ModelError::Config(format!("layer {} has a zero-width channel group", l.name)));
            }
            if let LayerKind::Conv { kernel, stride, .. } = l.kind {
                if kernel == 0 || stride == 0 {
                    return Err(ModelError::Config(format!("layer {} has zero kernel or stride", l.name)));
                }
            }
        }
        let feat = Self::check_chain("backbone", &self.backbone, &[Width::Fixed(3)])?;
        let e1 = Self::check_chain("dr_unrelated", &self.dr_unrelated, &[feat])?;
        let e2 = Self::check_chain("dr_related", &self.dr_related, &[feat])?;
        let twin = |l: &[LayerSpec]| l.iter().map(|x| (x.kind, x.inputs.clone(), x.out, x.relu)).collect::<Vec<_>>();
        if twin(&self.dr_unrelated) != twin(&self.dr_related) {
            return Err(ModelError::Config("E1 and E2 must share one architecture".into()));
        }
        let mut necks = Vec::new();
        for (n, block) in [
            ("neck_cls_z", &self.neck_cls_z),
            ("neck_cls_x", &self.neck_cls_x),
            ("neck_reg_z", &self.neck_reg_z),
            ("neck_reg_x", &self.neck_reg_x),
        ] {
            necks.push(Self::check_chain(n, block, &[e2])?);
        }
        if necks[0] != necks[1] || necks[2] != necks[3] {
            return Err(ModelError::Config("template and search necks must agree in width".into()));
        }
        let cls_tower = Self::check_chain("head_cls", &self.head_cls, &[necks[0]])?;
        let reg_tower = Self::check_chain("head_reg", &self.head_reg, &[necks[2]])?;
        Self::check_chain("cls_out", std::slice::from_ref(&self.cls_out), &[cls_tower])?;
        Self::check_chain("quality_out", std::slice::from_ref(&self.quality_out), &[cls_tower])?;
        Self::check_chain("reg_out", std::slice::from_ref(&self.reg_out), &[reg_tower])?;
        if self.cls_out.out != Width::Fixed(1)
            || self.quality_out.out != Width::Fixed(1)
            || self.reg_out.out != Width::Fixed(4)
        {
            return Err(ModelError::Config("heads must emit 1, 1 and 4 channels".into()));
        }
        let joint = vec![feat, e2, e1];
        for (name, block) in [("disc_global", &self.disc_global), ("disc_local", &self.disc_local)] {
            let first = block.first().ok_or_else(|| ModelError::Config(format!("{name} has no layers")))?;
            if first.inputs != joint {
                return Err(ModelError::Config(format!(
                    "{name} must take [f, f_r, f_u] channels {joint:?}, got {:?}",
                    first.inputs
                )));
            }
            let out = Self::check_chain(name, &block[1..], &[first.out])?;
            let last = if block.len() == 1 { first.out } else { out };
            if last != Width::Fixed(1) {
                return Err(ModelError::Config(format!("{name} must end in one score channel")));
            }
        }
        self.score_size()?;
        Ok(())
    }

    /// Canonical text form; the checkpoint hash is taken over it.
    pub fn canonical(&self) -> String {
        let mut s = format!(
            "template={} search={} stride={} reg_scale={:?}\n",
            self.template_size, self.search_size, self.total_stride, self.reg_scale
        );
        for l in self.layers() {
            s.push_str(&format!(
                "{} {:?} in={:?}x{} out={:?} relu={}\n",
                l.name, l.kind, l.inputs, l.in_spatial, l.out, l.relu
            ));
        }
        s
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rule() {
        assert_eq!(prune_channels(64, 0.5), 32);
        assert_eq!(prune_channels(64, 0.0), 64);
        assert_eq!(prune_channels(3, 0.5), 2);
        assert_eq!(prune_channels(5, 0.3), 4);
        assert_eq!(prune_channels(1, 0.9), 1);
        assert_eq!(prune_channels(32, 0.8), 6);
    }

    #[test]
    fn default_geometry() {
        let spec = ArchitectureSpec::default();
        assert_eq!(spec.total_stride, 8);
        // 96 -> 46 -> 22 -> 10 -> 8 -> 6
        assert_eq!(spec.template_feature_size().unwrap(), 6);
        // 256 -> 126 -> 62 -> 30 -> 28 -> 26
        assert_eq!(spec.search_feature_size().unwrap(), 26);
        // necks trim 2: 24 - 4 + 1
        assert_eq!(spec.score_size().unwrap(), 21);
    }

    #[test]
    fn twin_encoders() {
        let spec = ArchitectureSpec::default();
        let shapes = |ls: &[LayerSpec]| ls.iter().map(|l| l.weight_shape(0.5)).collect::<Vec<_>>();
        assert_eq!(shapes(&spec.dr_unrelated), shapes(&spec.dr_related));
        let mut bad = spec.clone();
        bad.dr_unrelated[0].relu = false;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_width_is_a_config_error() {
        let cfg = ArchConfig { dr_width: 0, ..ArchConfig::default() };
        assert!(matches!(ArchitectureSpec::from_config(&cfg), Err(ModelError::Config(_))));
    }

    #[test]
    fn tiny_template_rejected() {
        let cfg = ArchConfig { template_size: 40, ..ArchConfig::default() };
        assert!(ArchitectureSpec::from_config(&cfg).is_err());
    }

    #[test]
    fn hash_tracks_structure() {
        let a = ArchitectureSpec::default();
        let b = ArchitectureSpec::from_config(&ArchConfig { search_size: 192, ..ArchConfig::default() }).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), ArchitectureSpec::default().hash());
    }
}
