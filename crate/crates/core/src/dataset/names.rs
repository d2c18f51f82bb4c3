use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Identifier encoded in `HandWash_XXX_A_YY_G_ZZ.avi`: wash `X` (3 digits),
/// action class `Y` (01–12) and group `Z` (2 digits).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipId {
    pub wash_id: u16,
    pub action_class: u8,
    pub group: u8,
}

pub const NUM_ACTION_CLASSES: u8 = 12;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("invalid clip name {name:?}: {message}")]
pub struct NameError {
    pub name: String,
    /// `prefix`, `X`, `A`, `Y`, `G`, `Z` or `extension`.
    pub field: &'static str,
    pub message: String,
}

impl ClipId {
    pub fn new(wash_id: u16, action_class: u8, group: u8) -> Result<Self, NameError> {
        let id = ClipId {
            wash_id,
            action_class,
            group,
        };
        let name = id.to_string();
        let fail = |field, message: &str| {
            Err(NameError {
                name: name.clone(),
                field,
                message: message.into(),
            })
        };
        if wash_id > 999 {
            return fail("X", "field X must be at most 999");
        }
        if !(1..=NUM_ACTION_CLASSES).contains(&action_class) {
            return fail("Y", "field Y must be in 01..12");
        }
        if group > 99 {
            return fail("Z", "field Z must be at most 99");
        }
        Ok(id)
    }

    /// Zero-based class index used by the network.
    pub fn class_index(&self) -> usize {
        usize::from(self.action_class) - 1
    }

    /// Name without the `.avi` extension (used for clip directories).
    pub fn stem(&self) -> String {
        format!(
            "HandWash_{:03}_A_{:02}_G_{:02}",
            self.wash_id, self.action_class, self.group
        )
    }

    pub fn parse_stem(stem: &str) -> Result<Self, NameError> {
        format!("{stem}.avi").parse().map_err(|mut e: NameError| {
            e.name = stem.to_string();
            e
        })
    }
}

impl fmt::Display for ClipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.avi", self.stem())
    }
}

fn digits<'a>(
    rest: &'a str,
    width: usize,
    field: &'static str,
    err: &dyn Fn(&'static str, String) -> NameError,
) -> Result<(u32, &'a str), NameError> {
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    if end != width {
        return Err(err(field, format!("field {field} must be {width} digits")));
    }
    let value = rest[..end].parse().expect("ascii digits");
    Ok((value, &rest[end..]))
}

impl FromStr for ClipId {
    type Err = NameError;

    fn from_str(name: &str) -> Result<Self, NameError> {
        let err = |field, message| NameError {
            name: name.to_string(),
            field,
            message,
        };
        let rest = name
            .strip_prefix("HandWash_")
            .ok_or_else(|| err("prefix", "must start with \"HandWash_\"".into()))?;
        let (x, rest) = digits(rest, 3, "X", &err)?;
        let rest = rest
            .strip_prefix("_A_")
            .ok_or_else(|| err("A", "expected \"_A_\" after field X".into()))?;
        let (y, rest) = digits(rest, 2, "Y", &err)?;
        let rest = rest
            .strip_prefix("_G_")
            .ok_or_else(|| err("G", "expected \"_G_\" after field Y".into()))?;
        let (z, rest) = digits(rest, 2, "Z", &err)?;
        if rest != ".avi" {
            return Err(err("extension", "must end with \".avi\"".into()));
        }
        if !(1..=u32::from(NUM_ACTION_CLASSES)).contains(&y) {
            return Err(err("Y", "field Y must be in 01..12".into()));
        }
        Ok(ClipId {
            wash_id: x as u16,
            action_class: y as u8,
            group: z as u8,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let id: ClipId = "HandWash_047_A_07_G_03.avi".parse().unwrap();
        assert_eq!((id.wash_id, id.action_class, id.group), (47, 7, 3));
        let id: ClipId = "HandWash_001_A_12_G_01.avi".parse().unwrap();
        assert_eq!((id.wash_id, id.action_class, id.group), (1, 12, 1));
        assert_eq!(id.class_index(), 11);
    }

    #[test]
    fn width_and_range_errors_name_the_field() {
        let e = "HandWash_47_A_07_G_03.avi".parse::<ClipId>().unwrap_err();
        assert_eq!(e.field, "X");
        assert!(e.message.contains("field X must be 3 digits"));
        for (name, field) in [
            ("handwash_047_A_07_G_03.avi", "prefix"),
            ("HandWash_047_A_13_G_03.avi", "Y"),
            ("HandWash_047_A_00_G_03.avi", "Y"),
            ("HandWash_047_A_7_G_03.avi", "Y"),
            ("HandWash_047_B_07_G_03.avi", "A"),
            ("HandWash_047_A_07_G_003.avi", "Z"),
            ("HandWash_047_A_07_G_03.mp4", "extension"),
            ("HandWash_047_A_07_G_03.avi ", "extension"),
        ] {
            assert_eq!(name.parse::<ClipId>().unwrap_err().field, field, "{name}");
        }
    }

    #[test]
    fn stem_round_trip() {
        let id = ClipId::new(5, 3, 9).unwrap();
        assert_eq!(id.stem(), "HandWash_005_A_03_G_09");
        assert_eq!(ClipId::parse_stem(&id.stem()).unwrap(), id);
        assert!(ClipId::new(1000, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn format_parse_identity(x in 0u16..1000, y in 1u8..=12, z in 0u8..100) {
            let id = ClipId::new(x, y, z).unwrap();
            let name = id.to_string();
            prop_assert_eq!(name.parse::<ClipId>().unwrap(), id);
            prop_assert_eq!(name.parse::<ClipId>().unwrap().to_string(), name);
        }
    }
}
