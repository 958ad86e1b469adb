//! Closed-form parameter counts.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind};

/// Parameters covered by the closed-form formulas, for embedding width
/// `e = emb_dim` (1024 for RoBERTa-large sized inputs):
///
/// * Loc: `2e(x+y) + x² + y²𝓛`
/// * ArcLoc: `2e·d + d²r + (r/2)(1+r) + 2𝓛(r+𝓛)`, plus `9r²` per
///   transformer layer.
///
/// Equals [`crate::params::ParamStore::formula_tally`] of a model built with
/// `exact_count`.
pub fn param_count(config: &ModelConfig, num_labels: usize) -> Result<usize> {
    let e = config.emb_dim;
    let l = num_labels;
    match config.kind {
        ModelKind::Loc => {
            let (x, y) = (config.arc_mlp, config.label_mlp);
            Ok(2 * e * (x + y) + x * x + y * y * l)
        }
        ModelKind::ArcLoc => {
            let (d, r) = (config.mlp_dim, config.arc_size);
            if r % 2 != 0 {
                return Err(Error::Config(format!("arc_size must be even, got {r}")));
            }
            Ok(2 * e * d + d * d * r + (r / 2) * (1 + r) + 2 * l * (r + l) + 9 * r * r * config.transformer_layers)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            emb_dim: 1024,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn formula_values() {
        let loc = ModelConfig {
            arc_mlp: 2,
            label_mlp: 1,
            ..cfg(ModelKind::Loc)
        };
        assert_eq!(param_count(&loc, 3).unwrap(), 6151);
        let mut arc = ModelConfig {
            mlp_dim: 2,
            arc_size: 2,
            transformer_layers: 0,
            ..cfg(ModelKind::ArcLoc)
        };
        assert_eq!(param_count(&arc, 1).unwrap(), 4113);
        arc.transformer_layers = 1;
        assert_eq!(param_count(&arc, 1).unwrap(), 4113 + 36);
        arc.arc_size = 3;
        assert!(param_count(&arc, 1).is_err());
    }
}
