//! Weight transfer from the sequential language model into the lattice one.
//!
//! The two forms share every parameter name and shape, so transfer is an
//! exact, validated copy: each expected tensor must be present with the
//! right shape, and nothing else may be there.

use crate::numerics::ParamSet;

use super::{lm_param_specs, LmConfig, ModelError};

/// Copies a sequential LM parameter set for use by the lattice LM.
/// Fails if any tensor is missing, has the wrong shape, or is extraneous,
/// naming the offending parameter.
pub fn transfer_weights(source: &ParamSet, config: &LmConfig) -> Result<ParamSet, ModelError> {
    config.validate()?;
    let specs = lm_param_specs(config);
    let mut target = ParamSet::new();
    for (name, shape) in &specs {
        let tensor = source
            .get(name)
            .map_err(|_| ModelError::MissingParam { name: name.clone() })?;
        if tensor.shape() != shape.as_slice() {
            return Err(ModelError::ParamShape {
                name: name.clone(),
                expected: shape.clone(),
                got: tensor.shape().to_vec(),
            });
        }
        target.insert(name.clone(), tensor.clone())?;
    }
    if source.len() != specs.len() {
        let expected: std::collections::BTreeSet<&str> =
            specs.iter().map(|(name, _)| name.as_str()).collect();
        for name in source.names() {
            if !expected.contains(name) {
                return Err(ModelError::UnexpectedParam { name: name.to_string() });
            }
        }
    }
    Ok(target)
}
