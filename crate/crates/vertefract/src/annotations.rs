//! Sparse per-vertebra ground truth: a name, a severity grade and a 3D
//! centroid in mm, as read from the one-line-per-vertebra annotation files.
//!
//! File format: UTF-8 text, `name,grade,x_mm,y_mm,z_mm` per line, `#` starts
//! a comment, an optional header line beginning with `name` is skipped.
//! Coordinates live in the same physical frame as the volume origin/spacing.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Spine region, top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Thoracic,
    Lumbar,
    Sacral,
}

impl Region {
    fn prefix(self) -> char {
        match self {
            Region::Thoracic => 'T',
            Region::Lumbar => 'L',
            Region::Sacral => 'S',
        }
    }

    fn max_index(self) -> u8 {
        match self {
            Region::Thoracic => 12,
            Region::Lumbar => 5,
            Region::Sacral => 2,
        }
    }
}

/// A vertebra identifier from the fixed vocabulary T1-T12, L1-L5, S1-S2.
///
/// Ordering is anatomical, top (T1) to bottom (S2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertebraName {
    region: Region,
    index: u8,
}

impl VertebraName {
    pub fn new(region: Region, index: u8) -> Result<Self> {
        if index == 0 || index > region.max_index() {
            return Err(Error::Validation(format!(
                "no vertebra {}{index} in the vocabulary",
                region.prefix()
            )));
        }
        Ok(VertebraName { region, index })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    /// All names top to bottom; handy for generators.
    pub fn all() -> Vec<VertebraName> {
        let mut v = Vec::new();
        for region in [Region::Thoracic, Region::Lumbar, Region::Sacral] {
            for i in 1..=region.max_index() {
                v.push(VertebraName { region, index: i });
            }
        }
        v
    }
}

impl fmt::Display for VertebraName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.region.prefix(), self.index)
    }
}

impl serde::Serialize for VertebraName {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for VertebraName {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for VertebraName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let region = match chars.next().map(|c| c.to_ascii_uppercase()) {
            Some('T') => Region::Thoracic,
            Some('L') => Region::Lumbar,
            Some('S') => Region::Sacral,
            _ => {
                return Err(Error::Validation(format!("unknown vertebra name '{s}'")));
            }
        };
        let index: u8 = chars
            .as_str()
            .parse()
            .map_err(|_| Error::Validation(format!("unknown vertebra name '{s}'")))?;
        VertebraName::new(region, index)
    }
}

/// Genant severity grade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Grade {
    Normal,
    Mild,
    Moderate,
    Severe,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Grade::Normal => "normal",
            Grade::Mild => "mild",
            Grade::Moderate => "moderate",
            Grade::Severe => "severe",
        };
        f.write_str(s)
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Grade::Normal),
            "mild" => Ok(Grade::Mild),
            "moderate" => Ok(Grade::Moderate),
            "severe" => Ok(Grade::Severe),
            other => Err(Error::Validation(format!("unknown grade '{other}'"))),
        }
    }
}

/// One annotated vertebra.
#[derive(Debug, Clone, PartialEq)]
pub struct VertebraAnnotation {
    pub name: VertebraName,
    pub grade: Grade,
    /// Centroid in mm, image physical space.
    pub centroid: [f64; 3],
}

impl VertebraAnnotation {
    pub fn new(name: VertebraName, grade: Grade, centroid: [f64; 3]) -> Result<Self> {
        if centroid.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(format!(
                "centroid of {name} must be finite, got {centroid:?}"
            )));
        }
        Ok(VertebraAnnotation {
            name,
            grade,
            centroid,
        })
    }
}

/// The annotations of one case, anatomically ordered, names unique.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    case_id: String,
    annotations: Vec<VertebraAnnotation>,
}

impl AnnotationSet {
    pub fn new(
        case_id: impl Into<String>,
        mut annotations: Vec<VertebraAnnotation>,
    ) -> Result<Self> {
        annotations.sort_by_key(|a| a.name);
        for pair in annotations.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(Error::Validation(format!(
                    "duplicate annotation for vertebra {}",
                    pair[0].name
                )));
            }
        }
        Ok(AnnotationSet {
            case_id: case_id.into(),
            annotations,
        })
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn annotations(&self) -> &[VertebraAnnotation] {
        &self.annotations
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    /// True when any vertebra carries a non-normal grade.
    pub fn has_fracture(&self) -> bool {
        self.annotations.iter().any(|a| a.grade != Grade::Normal)
    }

    /// Parse an annotation file; the case id is the file stem.
    pub fn parse_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let case_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".to_string());
        Self::parse_str(case_id, &text)
    }

    pub fn parse_str(case_id: impl Into<String>, text: &str) -> Result<Self> {
        let mut annotations = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if annotations.is_empty() && fields[0].eq_ignore_ascii_case("name") {
                continue; // optional header
            }
            if fields.len() != 5 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 5 comma-separated fields, found {}", fields.len()),
                });
            }
            let name: VertebraName = fields[0].parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("{e}"),
            })?;
            let grade: Grade = fields[1].parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("{e}"),
            })?;
            let mut centroid = [0f64; 3];
            for (a, f) in fields[2..5].iter().enumerate() {
                centroid[a] = f.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid coordinate '{f}'"),
                })?;
            }
            annotations.push(VertebraAnnotation::new(name, grade, centroid).map_err(|e| {
                Error::Parse {
                    line: line_no,
                    msg: format!("{e}"),
                }
            })?);
        }
        AnnotationSet::new(case_id, annotations)
    }

    /// Write in the same format `parse_file` reads. Coordinates use Rust's
    /// round-trip float formatting, so save/parse is lossless.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("name,grade,x_mm,y_mm,z_mm\n");
        for a in &self.annotations {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                a.name, a.grade, a.centroid[0], a.centroid[1], a.centroid[2]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_plain_line() {
        let set = AnnotationSet::parse_str("c", "L3,moderate,120.5,88.0,212.0").unwrap();
        assert_eq!(set.len(), 1);
        let a = &set.annotations()[0];
        assert_eq!(a.name, "L3".parse().unwrap());
        assert_eq!(a.grade, Grade::Moderate);
        assert_eq!(a.centroid, [120.5, 88.0, 212.0]);
    }

    #[test]
    fn skips_comments_and_header() {
        let text =
            "# case 12\nname,grade,x_mm,y_mm,z_mm\nT11,normal,1,2,3 # inline\n\nL1,mild,4,5,6\n";
        let set = AnnotationSet::parse_str("c", text).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.has_fracture());
    }

    #[test]
    fn duplicate_vertebra_is_a_validation_error() {
        let text = "L3,normal,1,2,3\nL3,mild,4,5,6\n";
        match AnnotationSet::parse_str("c", text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("L3")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_grade_is_a_parse_error_with_line_number() {
        let text = "L2,normal,1,2,3\nL3,crushed,4,5,6\n";
        match AnnotationSet::parse_str("c", text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("crushed"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = "L2,normal,1,2\n";
        match AnnotationSet::parse_str("c", text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_parse_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.txt");
        let set = AnnotationSet::new(
            "ann",
            vec![
                VertebraAnnotation::new(
                    "T12".parse().unwrap(),
                    Grade::Severe,
                    [47.123456789, -3.0625, 101.9],
                )
                .unwrap(),
                VertebraAnnotation::new("L1".parse().unwrap(), Grade::Normal, [48.0, 47.5, 130.0])
                    .unwrap(),
            ],
        )
        .unwrap();
        set.save(&path).unwrap();
        let back = AnnotationSet::parse_file(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn names_are_ordered_top_to_bottom() {
        let t1: VertebraName = "T1".parse().unwrap();
        let t12: VertebraName = "T12".parse().unwrap();
        let l5: VertebraName = "L5".parse().unwrap();
        let s1: VertebraName = "S1".parse().unwrap();
        assert!(t1 < t12 && t12 < l5 && l5 < s1);
        assert_eq!(VertebraName::all().len(), 19);
    }

    #[test]
    fn out_of_vocabulary_names_are_rejected() {
        assert!("T13".parse::<VertebraName>().is_err());
        assert!("L0".parse::<VertebraName>().is_err());
        assert!("C3".parse::<VertebraName>().is_err());
        assert!("S2".parse::<VertebraName>().is_ok());
    }
}
