//! The five utensils and their nominal tool transforms.
//!
//! Tip frame: x along the handle toward the tip, z up out of the spoon bowl
//! when the utensil is level.

use serde::{Deserialize, Serialize};

use crate::geometry::{PoseSE3, Vec3};
use crate::sim::food::ScoopParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtensilKind {
    SiliconeSpoon,
    SmallPlasticSpoon,
    LargePlasticSpoon,
    PlasticFork,
    MetalFork,
}

impl UtensilKind {
    pub const ALL: [UtensilKind; 5] = [
        UtensilKind::SiliconeSpoon,
        UtensilKind::SmallPlasticSpoon,
        UtensilKind::LargePlasticSpoon,
        UtensilKind::PlasticFork,
        UtensilKind::MetalFork,
    ];

    pub fn is_spoon(self) -> bool {
        matches!(
            self,
            UtensilKind::SiliconeSpoon | UtensilKind::SmallPlasticSpoon | UtensilKind::LargePlasticSpoon
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            UtensilKind::SiliconeSpoon => "silicone_spoon",
            UtensilKind::SmallPlasticSpoon => "small_plastic_spoon",
            UtensilKind::LargePlasticSpoon => "large_plastic_spoon",
            UtensilKind::PlasticFork => "plastic_fork",
            UtensilKind::MetalFork => "metal_fork",
        }
    }

    /// Handle length from the flange to the tip, meters. Nominal values.
    pub fn length(self) -> f64 {
        match self {
            UtensilKind::SiliconeSpoon => 0.16,
            UtensilKind::SmallPlasticSpoon => 0.14,
            UtensilKind::LargePlasticSpoon => 0.17,
            UtensilKind::PlasticFork => 0.15,
            UtensilKind::MetalFork => 0.16,
        }
    }

    pub fn tip_transform(self) -> PoseSE3 {
        PoseSE3::from_translation(Vec3::new(self.length(), 0.0, 0.0))
    }

    pub fn scoop_params(self) -> ScoopParams {
        match self {
            UtensilKind::SiliconeSpoon => ScoopParams { footprint: 0.018, fraction: 0.45, capacity: 8.0 },
            UtensilKind::SmallPlasticSpoon => ScoopParams { footprint: 0.014, fraction: 0.45, capacity: 5.0 },
            UtensilKind::LargePlasticSpoon => ScoopParams { footprint: 0.022, fraction: 0.45, capacity: 12.0 },
            UtensilKind::PlasticFork | UtensilKind::MetalFork => {
                ScoopParams { footprint: 0.008, fraction: 0.6, capacity: 4.0 }
            }
        }
    }

    /// Share of each scoop that ends up stuck to the underside.
    pub fn residue_fraction(self) -> f64 {
        if self.is_spoon() {
            0.2
        } else {
            0.0
        }
    }
}

/// Utensil mounted on the flange, with the food it carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utensil {
    pub kind: UtensilKind,
    pub tip: PoseSE3,
    /// Capsule radius used for line-of-sight occlusion, meters.
    pub radius: f64,
    /// Grams on top of the spoon bowl or fork tines.
    pub load_top: f64,
    /// Grams stuck to the underside.
    pub load_bottom: f64,
}

impl Utensil {
    pub fn new(kind: UtensilKind) -> Self {
        Self {
            kind,
            tip: kind.tip_transform(),
            radius: 0.015,
            load_top: 0.0,
            load_bottom: 0.0,
        }
    }

    pub fn load(&self) -> f64 {
        self.load_top + self.load_bottom
    }
}
