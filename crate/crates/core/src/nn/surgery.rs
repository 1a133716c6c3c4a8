//! Replace BatchNorm + ReLU idioms with HerPN blocks.

use super::{LayerPath, LayerSpec, ModelGraph, NnError, ResidualBlock, ResidualVariant};
use crate::herpn::HerPNParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurgeryMode {
    /// Only direct pair replacement; standard residual blocks are rejected.
    Strict,
    /// Also rewire standard residual blocks so nothing follows the addition.
    Surgery,
}

/// Rewrite `model` so it contains no ReLU and no standalone BatchNorm.
///
/// * `[BN, ReLU]` or `[ReLU, BN]` becomes one HerPN over the BN channels.
/// * A pre-activation residual block keeps its wiring with HerPN inside.
/// * A standard residual block (ReLU after the addition) is rejected in
///   [`SurgeryMode::Strict`]; in [`SurgeryMode::Surgery`] its branch
///   `[.., BN]` becomes `[.., HerPN]` and the post-add ReLU is dropped.
///
/// New HerPN layers carry unpopulated statistics; calibrate or train them.
pub fn herpnize(model: &ModelGraph, mode: SurgeryMode) -> Result<ModelGraph, NnError> {
    model.shapes()?;
    let layers = rewrite(&model.layers, mode, None)?;
    let mut out = model.clone();
    out.layers = layers;
    out.name = format!("{}-herpn", model.name);
    out.shapes()?;
    Ok(out)
}

fn path(base: Option<(&LayerPath, &'static str)>, i: usize) -> LayerPath {
    match base {
        None => LayerPath::root(i),
        Some((p, part)) => p.child(part, i),
    }
}

fn rewrite(
    layers: &[LayerSpec],
    mode: SurgeryMode,
    base: Option<(&LayerPath, &'static str)>,
) -> Result<Vec<LayerSpec>, NnError> {
    let mut out = Vec::with_capacity(layers.len());
    let mut i = 0;
    while i < layers.len() {
        let at = path(base, i);
        match (&layers[i], layers.get(i + 1)) {
            (LayerSpec::BatchNorm(bn), Some(LayerSpec::Relu))
            | (LayerSpec::Relu, Some(LayerSpec::BatchNorm(bn))) => {
                out.push(LayerSpec::Herpn(HerPNParams::new(bn.channels)));
                i += 2;
                continue;
            }
            (LayerSpec::Relu, _) | (LayerSpec::BatchNorm(_), _) => {
                return Err(NnError::Rejected {
                    at,
                    kind: layers[i].kind(),
                    reason: "no adjacent BatchNorm/ReLU partner to fuse into HerPN".into(),
                });
            }
            (LayerSpec::Residual(block), _) => {
                out.push(LayerSpec::Residual(rewrite_block(block, mode, &at)?));
            }
            (other, _) => out.push(other.clone()),
        }
        i += 1;
    }
    Ok(out)
}

fn rewrite_block(
    block: &ResidualBlock,
    mode: SurgeryMode,
    at: &LayerPath,
) -> Result<ResidualBlock, NnError> {
    let shortcut = match &block.shortcut {
        Some(s) => Some(rewrite(s, mode, Some((at, "shortcut")))?),
        None => None,
    };
    let (variant, branch) = match block.variant {
        ResidualVariant::PreAct | ResidualVariant::PaHerpn => (
            ResidualVariant::PaHerpn,
            rewrite(&block.branch, mode, Some((at, "branch")))?,
        ),
        ResidualVariant::Herpn => (
            ResidualVariant::Herpn,
            rewrite(&block.branch, mode, Some((at, "branch")))?,
        ),
        ResidualVariant::Standard => {
            if mode == SurgeryMode::Strict {
                return Err(NnError::Rejected {
                    at: at.clone(),
                    kind: "Residual",
                    reason: "ReLU follows the skip-connection addition; use surgery mode".into(),
                });
            }
            let Some((LayerSpec::BatchNorm(bn), head)) = block.branch.split_last() else {
                return Err(NnError::Rejected {
                    at: at.clone(),
                    kind: "Residual",
                    reason: "standard block branch must end with BatchNorm".into(),
                });
            };
            let mut branch = rewrite(head, mode, Some((at, "branch")))?;
            branch.push(LayerSpec::Herpn(HerPNParams::new(bn.channels)));
            (ResidualVariant::Herpn, branch)
        }
    };
    Ok(ResidualBlock {
        variant,
        branch,
        shortcut,
    })
}
