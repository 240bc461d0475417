use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Label id for pixels without a usable class.
pub const VOID_LABEL: u8 = 255;

/// Semantic class table. Ids run `0..names.len()`; [`VOID_LABEL`] is reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    pub names: Vec<String>,
    pub dynamic_ids: BTreeSet<u8>,
    pub void_id: u8,
}

impl ClassTable {
    pub fn new(names: Vec<String>, dynamic_ids: BTreeSet<u8>) -> Result<Self, String> {
        if names.len() >= VOID_LABEL as usize {
            return Err(format!("{} classes leave no room for void", names.len()));
        }
        if let Some(bad) = dynamic_ids.iter().find(|&&id| id as usize >= names.len()) {
            return Err(format!("dynamic id {bad} is not a class"));
        }
        Ok(Self {
            names,
            dynamic_ids,
            void_id: VOID_LABEL,
        })
    }

    /// The 19 Cityscapes train-id classes; person through bicycle are dynamic.
    pub fn cityscapes() -> Self {
        let names = [
            "road",
            "sidewalk",
            "building",
            "wall",
            "fence",
            "pole",
            "traffic_light",
            "traffic_sign",
            "vegetation",
            "terrain",
            "sky",
            "person",
            "rider",
            "car",
            "truck",
            "bus",
            "train",
            "motorcycle",
            "bicycle",
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            (11..=18).collect(),
        )
        .expect("static table is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn is_void(&self, id: u8) -> bool {
        id == self.void_id
    }

    pub fn is_dynamic(&self, id: u8) -> bool {
        self.dynamic_ids.contains(&id)
    }

    /// Known class id or void.
    pub fn is_known(&self, id: u8) -> bool {
        (id as usize) < self.names.len() || self.is_void(id)
    }

    /// Class ids that survive into the semantic map.
    pub fn static_ids(&self) -> Vec<u8> {
        (0..self.names.len() as u8)
            .filter(|id| !self.is_dynamic(*id))
            .collect()
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }
}

pub fn load_class_table(path: &Path) -> Result<ClassTable, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut entries = BTreeMap::new();
    let mut dynamic = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(IngestError::parse(path, i + 1, "expected `<id> <name> <0|1>`"));
        }
        let id: u8 = fields[0]
            .parse()
            .map_err(|_| IngestError::parse(path, i + 1, "bad class id"))?;
        let is_dynamic = match fields[2] {
            "0" => false,
            "1" => true,
            _ => return Err(IngestError::parse(path, i + 1, "dynamic flag must be 0 or 1")),
        };
        if entries.insert(id, fields[1].to_string()).is_some() {
            return Err(IngestError::parse(path, i + 1, format!("duplicate class id {id}")));
        }
        if is_dynamic {
            dynamic.insert(id);
        }
    }
    if entries.keys().copied().ne(0..entries.len() as u8) {
        return Err(IngestError::Invalid {
            path: path.into(),
            message: "class ids must be contiguous from 0".into(),
        });
    }
    ClassTable::new(entries.into_values().collect(), dynamic).map_err(|message| {
        IngestError::Invalid {
            path: path.into(),
            message,
        }
    })
}

pub fn write_class_table(path: &Path, table: &ClassTable) -> std::io::Result<()> {
    let mut out = String::from("# id name dynamic\n");
    for (id, name) in table.names.iter().enumerate() {
        let dynamic = u8::from(table.is_dynamic(id as u8));
        out.push_str(&format!("{id} {name} {dynamic}\n"));
    }
    fs::write(path, out)
}

/// Capture condition of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Day,
    Night,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Day => "day",
            Condition::Night => "night",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "day" => Ok(Condition::Day),
            "night" => Ok(Condition::Night),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

pub fn load_conditions(path: &Path) -> Result<BTreeMap<String, Condition>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(tag), None) = (it.next(), it.next(), it.next()) else {
            return Err(IngestError::parse(path, i + 1, "expected `<image-name> <day|night>`"));
        };
        let cond = tag
            .parse()
            .map_err(|e: String| IngestError::parse(path, i + 1, e))?;
        out.insert(name.to_string(), cond);
    }
    Ok(out)
}

pub fn write_conditions<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a str, Condition)>,
) -> std::io::Result<()> {
    let mut out = String::new();
    for (name, cond) in entries {
        out.push_str(&format!("{name} {cond}\n"));
    }
    fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cityscapes_table() {
        let t = ClassTable::cityscapes();
        assert_eq!(t.len(), 19);
        assert_eq!(t.id_of("building"), Some(2));
        assert!(t.is_dynamic(13));
        assert!(!t.is_dynamic(2));
        assert!(t.is_known(255));
        assert!(!t.is_known(200));
    }

    #[test]
    fn class_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.txt");
        write_class_table(&p, &ClassTable::cityscapes()).unwrap();
        assert_eq!(load_class_table(&p).unwrap(), ClassTable::cityscapes());
    }

    #[test]
    fn class_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("classes.txt");
        fs::write(&p, "0 road 0\n2 building 0\n").unwrap();
        assert!(load_class_table(&p).is_err());
        fs::write(&p, "0 road 0\n1 car 2\n").unwrap();
        assert!(matches!(
            load_class_table(&p),
            Err(IngestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn conditions_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("conditions.txt");
        fs::write(&p, "a day\nb night\n").unwrap();
        let c = load_conditions(&p).unwrap();
        assert_eq!(c["a"], Condition::Day);
        assert_eq!(c["b"], Condition::Night);
        fs::write(&p, "a dusk\n").unwrap();
        assert!(load_conditions(&p).is_err());
    }
}
