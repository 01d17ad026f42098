use std::fmt;

use crate::error::{Error, Result};

/// The six scalar/vector fields handled by the pipeline.
///
/// `Distance` and `Normal` are geometric inputs; the other four are the
/// physical outputs regressed by the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldTag {
    /// Distance to the body surface, defined on volume points.
    Distance,
    /// Outward unit normal, defined on surface points only.
    Normal,
    /// Horizontal velocity component.
    VelocityX,
    /// Vertical velocity component.
    VelocityY,
    /// Static pressure per unit density.
    Pressure,
    /// Turbulent kinematic viscosity.
    Viscosity,
}

impl FieldTag {
    pub const ALL: [FieldTag; 6] = [
        FieldTag::Distance,
        FieldTag::Normal,
        FieldTag::VelocityX,
        FieldTag::VelocityY,
        FieldTag::Pressure,
        FieldTag::Viscosity,
    ];

    /// The geometric inputs encoded before processing.
    pub const INPUTS: [FieldTag; 2] = [FieldTag::Distance, FieldTag::Normal];

    /// The physical outputs predicted by the processor.
    pub const OUTPUTS: [FieldTag; 4] = [
        FieldTag::VelocityX,
        FieldTag::VelocityY,
        FieldTag::Pressure,
        FieldTag::Viscosity,
    ];

    /// Number of scalar components (2 for the normal field, 1 otherwise).
    pub fn components(self) -> usize {
        match self {
            FieldTag::Normal => 2,
            _ => 1,
        }
    }

    /// Whether observations of this field live on the surface mesh.
    pub fn on_surface(self) -> bool {
        matches!(self, FieldTag::Normal)
    }

    /// Short key used in CLI flags, config keys and file names.
    pub fn key(self) -> &'static str {
        match self {
            FieldTag::Distance => "d",
            FieldTag::Normal => "n",
            FieldTag::VelocityX => "vx",
            FieldTag::VelocityY => "vy",
            FieldTag::Pressure => "p",
            FieldTag::Viscosity => "nut",
        }
    }

    pub fn parse(s: &str) -> Result<FieldTag> {
        FieldTag::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown field `{s}` (expected d|n|vx|vy|p|nut)")))
    }

    fn index(self) -> usize {
        FieldTag::ALL.iter().position(|t| *t == self).unwrap()
    }
}

impl fmt::Display for FieldTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// One value of type `T` per field, indexable by [`FieldTag`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerField<T> {
    slots: [T; 6],
}

impl<T> PerField<T> {
    pub fn from_fn(mut f: impl FnMut(FieldTag) -> T) -> Self {
        PerField {
            slots: FieldTag::ALL.map(&mut f),
        }
    }

    pub fn get(&self, tag: FieldTag) -> &T {
        &self.slots[tag.index()]
    }

    pub fn get_mut(&mut self, tag: FieldTag) -> &mut T {
        &mut self.slots[tag.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldTag, &T)> {
        FieldTag::ALL.into_iter().zip(self.slots.iter())
    }
}

impl<T> std::ops::Index<FieldTag> for PerField<T> {
    type Output = T;
    fn index(&self, tag: FieldTag) -> &T {
        self.get(tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_round_trip() {
        for tag in FieldTag::ALL {
            assert_eq!(FieldTag::parse(tag.key()).unwrap(), tag);
        }
        assert!(FieldTag::parse("vorticity").is_err());
    }

    #[test]
    fn component_counts() {
        assert_eq!(FieldTag::Normal.components(), 2);
        assert_eq!(FieldTag::Pressure.components(), 1);
        assert!(FieldTag::Normal.on_surface());
        assert!(!FieldTag::Distance.on_surface());
    }
}
