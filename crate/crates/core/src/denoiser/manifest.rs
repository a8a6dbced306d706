use serde::{Deserialize, Serialize};

/// Which sub-network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerPath {
    VoxelInit,
    Completion,
    Unet,
    Condition,
    Match,
    Points,
    Interaction,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    Conv3d,
    Conv2d,
}

/// Structural record of one layer, enough to audit the network without weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub path: LayerPath,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
    pub bias: bool,
    pub normalization: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralAudit {
    pub normalization_layers: usize,
    pub biased_completion_convs: usize,
    pub completion_convs: usize,
    pub unet_convs: usize,
    pub biased_unet_convs: usize,
}

impl StructuralAudit {
    pub fn of(layers: &[LayerSpec]) -> Self {
        let is_conv = |l: &&LayerSpec| matches!(l.kind, LayerKind::Conv3d | LayerKind::Conv2d);
        let in_path = |p: LayerPath| move |l: &&LayerSpec| l.path == p;
        Self {
            normalization_layers: layers.iter().filter(|l| l.normalization).count(),
            completion_convs: layers.iter().filter(is_conv).filter(in_path(LayerPath::Completion)).count(),
            biased_completion_convs: layers
                .iter()
                .filter(is_conv)
                .filter(in_path(LayerPath::Completion))
                .filter(|l| l.bias)
                .count(),
            unet_convs: layers.iter().filter(is_conv).filter(in_path(LayerPath::Unet)).count(),
            biased_unet_convs: layers
                .iter()
                .filter(is_conv)
                .filter(in_path(LayerPath::Unet))
                .filter(|l| l.bias)
                .count(),
        }
    }

    pub fn passes(&self) -> bool {
        self.normalization_layers == 0 && self.biased_completion_convs == 0 && self.biased_unet_convs == 0
    }
}
