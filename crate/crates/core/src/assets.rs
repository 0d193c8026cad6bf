//! Built-in desk-scale models.

use crate::error::{Error, Result};
use crate::model::{load_model, DocumentOptions, Model};

/// 10 joints (root x/z slides and pitch, three neck hinges, hip, knee,
/// ankle, toe), 8 leg muscles, two contact sites on the toe.
pub const PLANAR_LEG: &str = include_str!("../assets/planar_leg.model");
/// Five-joint neck on a fixed rib cage with a `beak` site and an S-shaped
/// reference pose.
pub const NECK: &str = include_str!("../assets/neck.model");
pub const PENDULUM: &str = include_str!("../assets/pendulum.model");

pub const NAMES: [&str; 3] = ["planar_leg", "neck", "pendulum"];

pub fn source(name: &str) -> Option<&'static str> {
    match name {
        "planar_leg" => Some(PLANAR_LEG),
        "neck" => Some(NECK),
        "pendulum" => Some(PENDULUM),
        _ => None,
    }
}

pub fn load(name: &str) -> Result<Model> {
    let text = source(name).ok_or_else(|| Error::Unknown {
        kind: "built-in model",
        name: name.to_string(),
    })?;
    load_model(text, &DocumentOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_load() {
        let leg = load("planar_leg").unwrap();
        assert_eq!(leg.joints.len(), 10);
        assert_eq!(leg.muscles.len(), 8);
        assert_eq!(leg.sites_tagged("contact").count(), 2);
        let neck = load("neck").unwrap();
        assert!(neck.site_index("beak").is_some());
        assert!(!neck.reference_pose.is_empty());
        assert_eq!(load("pendulum").unwrap().joints.len(), 1);
        assert!(load("nope").is_err());
    }
}
