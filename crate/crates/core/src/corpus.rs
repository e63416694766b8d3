//! Dataset ingestion, label normalization and split construction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stance {
    Favor,
    Against,
    Neutral,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favor, Stance::Against, Stance::Neutral];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Stance::Favor => 0,
            Stance::Against => 1,
            Stance::Neutral => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Stance> {
        Stance::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favor => "FAVOR",
            Stance::Against => "AGAINST",
            Stance::Neutral => "NEUTRAL",
        }
    }
}

impl fmt::Display for Stance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" => Ok(Stance::Favor),
            "AGAINST" => Ok(Stance::Against),
            "NEUTRAL" => Ok(Stance::Neutral),
            other => Err(Error::config(format!("unknown stance {other:?}"))),
        }
    }
}

/// One labeled or unlabeled example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub target: String,
    pub label: Option<Stance>,
    pub masked_text: Option<String>,
    /// Few-shot marker: `true` when the target also occurs in training data.
    pub seen: Option<bool>,
}

impl Instance {
    pub fn new(id: impl Into<String>, target: impl Into<String>, text: impl Into<String>) -> Self {
        Instance {
            id: id.into(),
            text: text.into(),
            target: target.into(),
            label: None,
            masked_text: None,
            seen: None,
        }
    }

    pub fn with_label(mut self, label: Stance) -> Self {
        self.label = Some(label);
        self
    }
}

/// Maps source label strings onto the three-way stance enum.
///
/// Keys are matched case-insensitively after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    mapping: BTreeMap<String, Stance>,
    drop_list: BTreeSet<String>,
}

impl LabelScheme {
    pub fn new<'a>(
        mapping: impl IntoIterator<Item = (&'a str, Stance)>,
        drop_list: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mapping: BTreeMap<String, Stance> = mapping
            .into_iter()
            .map(|(k, v)| (normalize_label(k), v))
            .collect();
        let drop_list: BTreeSet<String> = drop_list.into_iter().map(normalize_label).collect();
        if let Some(clash) = drop_list.iter().find(|d| mapping.contains_key(*d)) {
            return Err(Error::config(format!(
                "label {clash:?} is both mapped and dropped"
            )));
        }
        Ok(LabelScheme { mapping, drop_list })
    }

    /// FAVOR / AGAINST / NEUTRAL spelled out, as written by bundle files.
    pub fn canonical() -> Self {
        Self::new(
            Stance::ALL.iter().map(|s| (s.as_str(), *s)),
            std::iter::empty(),
        )
        .expect("static scheme")
    }

    pub fn semeval() -> Self {
        Self::new(
            [
                ("FAVOR", Stance::Favor),
                ("AGAINST", Stance::Against),
                ("NONE", Stance::Neutral),
            ],
            std::iter::empty(),
        )
        .expect("static scheme")
    }

    /// Support → Favor, Refute → Against, Comment → Neutral; Unrelated rows dropped.
    pub fn wtwt() -> Self {
        Self::new(
            [
                ("support", Stance::Favor),
                ("refute", Stance::Against),
                ("comment", Stance::Neutral),
            ],
            ["unrelated"],
        )
        .expect("static scheme")
    }

    pub fn covid() -> Self {
        Self::new(
            [
                ("FAVOR", Stance::Favor),
                ("IN-FAVOR", Stance::Favor),
                ("AGAINST", Stance::Against),
                ("NONE", Stance::Neutral),
                ("NEITHER", Stance::Neutral),
            ],
            std::iter::empty(),
        )
        .expect("static scheme")
    }

    /// VAST integer labels: 0 = con, 1 = pro, 2 = neutral.
    pub fn vast() -> Self {
        Self::new(
            [
                ("0", Stance::Against),
                ("1", Stance::Favor),
                ("2", Stance::Neutral),
            ],
            std::iter::empty(),
        )
        .expect("static scheme")
    }

    /// `Ok(None)` means the row should be discarded.
    pub fn map(&self, raw: &str) -> std::result::Result<Option<Stance>, String> {
        let key = normalize_label(raw);
        if let Some(stance) = self.mapping.get(&key) {
            Ok(Some(*stance))
        } else if self.drop_list.contains(&key) {
            Ok(None)
        } else {
            Err(format!("unmappable label {raw:?}"))
        }
    }
}

fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Names the columns of a delimited dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub text: String,
    pub target: String,
    pub label: Option<String>,
    pub id: Option<String>,
    pub seen: Option<String>,
    pub masked_text: Option<String>,
    pub delimiter: u8,
}

impl ColumnSpec {
    pub fn new(text: &str, target: &str, label: Option<&str>) -> Self {
        ColumnSpec {
            text: text.to_string(),
            target: target.to_string(),
            label: label.map(str::to_string),
            id: None,
            seen: None,
            masked_text: None,
            delimiter: b'\t',
        }
    }

    /// Columns of the bundle files this crate writes.
    pub fn canonical() -> Self {
        ColumnSpec {
            text: "text".into(),
            target: "target".into(),
            label: Some("label".into()),
            id: Some("id".into()),
            seen: Some("seen".into()),
            masked_text: Some("text_masked".into()),
            delimiter: b'\t',
        }
    }

    /// SemEval-2016 Task 6 distribution: `ID  Target  Tweet  Stance`.
    pub fn semeval() -> Self {
        let mut spec = Self::new("Tweet", "Target", Some("Stance"));
        spec.id = Some("ID".into());
        spec
    }

    /// VAST csv: `post`, `new_topic`, `label`, `seen?`.
    pub fn vast() -> Self {
        let mut spec = Self::new("post", "new_topic", Some("label"));
        spec.seen = Some("seen?".into());
        spec.delimiter = b',';
        spec
    }

    pub fn with_delimiter(mut self, delimiter: u8) -> Self {
        self.delimiter = delimiter;
        self
    }
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| {
            Error::schema(
                path,
                format!(
                    "missing column {name:?} (found {:?})",
                    headers.iter().collect::<Vec<_>>()
                ),
            )
        })
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "1.0" => Some(true),
        "0" | "false" | "no" | "0.0" => Some(false),
        _ => None,
    }
}

/// Reads one delimited file with a header row into instances.
///
/// Rows are numbered from 1 (the first data row) in error messages.
pub fn load_dataset(path: &Path, format: &ColumnSpec, scheme: &LabelScheme) -> Result<Vec<Instance>> {
    let raw = fs::read_to_string(path)?;
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .flexible(false)
        .quoting(format.delimiter != b'\t')
        .from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let text_col = column_index(&headers, &format.text, path)?;
    let target_col = column_index(&headers, &format.target, path)?;
    let label_col = format
        .label
        .as_deref()
        .map(|c| column_index(&headers, c, path))
        .transpose()?;
    let id_col = format
        .id
        .as_deref()
        .map(|c| column_index(&headers, c, path))
        .transpose()?;
    let seen_col = format
        .seen
        .as_deref()
        .map(|c| column_index(&headers, c, path))
        .transpose()?;
    // The masked column is optional even when named: files are masked later.
    let masked_col = format
        .masked_text
        .as_deref()
        .and_then(|c| headers.iter().position(|h| h.trim() == c));

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let label = match label_col {
            Some(col) => match scheme.map(field(col)) {
                Ok(Some(stance)) => Some(stance),
                Ok(None) => continue,
                Err(message) => return Err(Error::Data { row, message }),
            },
            None => None,
        };
        let text = field(text_col).trim();
        let target = field(target_col).trim();
        if text.is_empty() {
            return Err(Error::Data {
                row,
                message: "empty text".into(),
            });
        }
        if target.is_empty() {
            return Err(Error::Data {
                row,
                message: "empty target".into(),
            });
        }
        let seen = match seen_col {
            Some(col) => Some(parse_flag(field(col)).ok_or_else(|| Error::Data {
                row,
                message: format!("unparseable seen marker {:?}", field(col)),
            })?),
            None => None,
        };
        let id = match id_col {
            Some(col) if !field(col).trim().is_empty() => field(col).trim().to_string(),
            _ => format!("{stem}-{row}"),
        };
        let masked_text = masked_col
            .map(|c| field(c).trim())
            .filter(|m| !m.is_empty())
            .map(str::to_string);
        out.push(Instance {
            id,
            text: text.to_string(),
            target: target.to_string(),
            label,
            masked_text,
            seen,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    ZeroShot,
    FewShot,
    CrossTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
    pub protocol: Protocol,
    pub seed: u64,
}

pub fn targets_of(instances: &[Instance]) -> BTreeSet<&str> {
    instances.iter().map(|i| i.target.as_str()).collect()
}

impl DatasetBundle {
    /// Checks the protocol invariant on target overlap.
    pub fn validate(&self) -> Result<()> {
        let test_targets = targets_of(&self.test);
        match self.protocol {
            Protocol::ZeroShot => {
                let seen: BTreeSet<&str> = targets_of(&self.train)
                    .union(&targets_of(&self.dev))
                    .copied()
                    .collect();
                let leaked: Vec<&str> = test_targets.intersection(&seen).copied().collect();
                if !leaked.is_empty() {
                    return Err(Error::contract(format!(
                        "zero-shot bundle leaks test targets into train/dev: {leaked:?}"
                    )));
                }
            }
            Protocol::CrossTarget => {
                let train_targets = targets_of(&self.train);
                if train_targets.len() > 1 || test_targets.len() > 1 {
                    return Err(Error::contract(
                        "cross-target bundle must have one source and one destination target",
                    ));
                }
                if train_targets.intersection(&test_targets).next().is_some() {
                    return Err(Error::contract(
                        "cross-target bundle has the same target in train and test",
                    ));
                }
            }
            Protocol::FewShot => {}
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mutable access to all three splits in train/dev/test order.
    pub fn splits_mut(&mut self) -> [&mut Vec<Instance>; 3] {
        [&mut self.train, &mut self.dev, &mut self.test]
    }
}

fn check_fraction(dev_fraction: f64) -> Result<()> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::config(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    Ok(())
}

/// floor(fraction × n), tolerant of binary representation error in the product.
fn split_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn require_target(instances: &[Instance], target: &str) -> Result<()> {
    if instances.iter().any(|i| i.target == target) {
        Ok(())
    } else {
        Err(Error::UnknownTarget {
            target: target.to_string(),
            available: targets_of(instances).into_iter().map(str::to_string).collect(),
        })
    }
}

/// Leave-one-target-out split: all instances of `held_out_target` form the
/// test set, the rest is shuffled and divided into train and dev.
pub fn make_zero_shot_split(
    instances: &[Instance],
    held_out_target: &str,
    dev_fraction: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    check_fraction(dev_fraction)?;
    require_target(instances, held_out_target)?;
    let (test, mut rest): (Vec<Instance>, Vec<Instance>) = instances
        .iter()
        .cloned()
        .partition(|i| i.target == held_out_target);
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = split_size(dev_fraction, rest.len());
    let train = rest.split_off(n_dev);
    let bundle = DatasetBundle {
        train,
        dev: rest,
        test,
        protocol: Protocol::ZeroShot,
        seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Train on every `source_target` instance; split the destination target
/// into dev (`dev_fraction`) and test (the remainder).
pub fn make_cross_target_split(
    instances: &[Instance],
    source_target: &str,
    dest_target: &str,
    dev_fraction: f64,
    seed: u64,
) -> Result<DatasetBundle> {
    if source_target == dest_target {
        return Err(Error::config(format!(
            "cross-target split needs distinct targets (got {source_target:?} twice); \
             use the zero-shot protocol instead"
        )));
    }
    check_fraction(dev_fraction)?;
    require_target(instances, source_target)?;
    require_target(instances, dest_target)?;
    let train: Vec<Instance> = instances
        .iter()
        .filter(|i| i.target == source_target)
        .cloned()
        .collect();
    let mut dest: Vec<Instance> = instances
        .iter()
        .filter(|i| i.target == dest_target)
        .cloned()
        .collect();
    dest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = split_size(dev_fraction, dest.len());
    let test = dest.split_off(n_dev);
    let bundle = DatasetBundle {
        train,
        dev: dest,
        test,
        protocol: Protocol::CrossTarget,
        seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VastSubset {
    Zero,
    Few,
    All,
}

impl FromStr for VastSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(VastSubset::Zero),
            "few" => Ok(VastSubset::Few),
            "all" => Ok(VastSubset::All),
            other => Err(Error::config(format!("unknown VAST subset {other:?}"))),
        }
    }
}

/// Passes the provided VAST splits through, filtering test by the seen marker.
pub fn make_vast_split(
    train_path: &Path,
    dev_path: &Path,
    test_path: &Path,
    format: &ColumnSpec,
    scheme: &LabelScheme,
    subset: VastSubset,
) -> Result<DatasetBundle> {
    if format.seen.is_none() {
        return Err(Error::schema(
            test_path,
            "VAST split requires a seen/unseen marker column",
        ));
    }
    let train = load_dataset(train_path, format, scheme)?;
    let dev = load_dataset(dev_path, format, scheme)?;
    let mut test = load_dataset(test_path, format, scheme)?;
    let protocol = match subset {
        VastSubset::Zero => {
            test.retain(|i| i.seen == Some(false));
            Protocol::ZeroShot
        }
        VastSubset::Few => {
            test.retain(|i| i.seen == Some(true));
            if test.is_empty() {
                warn!(path = %test_path.display(), "few-shot subset selected no test instances");
            }
            Protocol::FewShot
        }
        VastSubset::All => Protocol::FewShot,
    };
    let bundle = DatasetBundle {
        train,
        dev,
        test,
        protocol,
        seed: 0,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes instances in the canonical tab-separated layout.
pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_path(path)?;
    writer.write_record(["id", "target", "text", "text_masked", "label", "seen"])?;
    for inst in instances {
        let seen = match inst.seen {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        writer.write_record([
            sanitize_field(&inst.id).as_str(),
            sanitize_field(&inst.target).as_str(),
            sanitize_field(&inst.text).as_str(),
            sanitize_field(inst.masked_text.as_deref().unwrap_or("")).as_str(),
            inst.label.map(Stance::as_str).unwrap_or(""),
            seen,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Tabs and newlines cannot survive an unquoted TSV cell.
fn sanitize_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Reads a canonical file; unlabeled rows are allowed.
pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    let raw = fs::read_to_string(path)?;
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| column_index(&headers, name, path);
    let (id_c, target_c, text_c, label_c) = (col("id")?, col("target")?, col("text")?, col("label")?);
    let masked_c = headers.iter().position(|h| h == "text_masked");
    let seen_c = headers.iter().position(|h| h == "seen");
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let get = |c: usize| record.get(c).unwrap_or("");
        let label = match get(label_c).trim() {
            "" => None,
            raw => Some(raw.parse::<Stance>().map_err(|_| Error::Data {
                row,
                message: format!("unknown label {raw:?}"),
            })?),
        };
        let opt = |c: Option<usize>| c.map(get).filter(|s| !s.is_empty());
        out.push(Instance {
            id: get(id_c).to_string(),
            target: get(target_c).to_string(),
            text: get(text_c).to_string(),
            masked_text: opt(masked_c).map(str::to_string),
            label,
            seen: opt(seen_c).and_then(parse_flag),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub protocol: Protocol,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub targets: BTreeMap<String, Vec<String>>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "dev", "test"];

fn split_file(dir: &Path, split: &str, masked: bool) -> PathBuf {
    if masked {
        dir.join(format!("{split}_masked.tsv"))
    } else {
        dir.join(format!("{split}.tsv"))
    }
}

/// Writes `train.tsv`, `dev.tsv`, `test.tsv` and `manifest.json` into `dir`.
pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    write_bundle_files(dir, bundle, false)
}

/// Same layout with a `_masked` suffix on the split files, used after augmentation.
pub fn write_masked_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    write_bundle_files(dir, bundle, true)
}

fn write_bundle_files(dir: &Path, bundle: &DatasetBundle, masked: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let splits = [&bundle.train, &bundle.dev, &bundle.test];
    let mut counts = BTreeMap::new();
    let mut targets = BTreeMap::new();
    for (name, split) in SPLIT_NAMES.iter().zip(splits) {
        write_instances(&split_file(dir, name, masked), split)?;
        counts.insert(name.to_string(), split.len());
        targets.insert(
            name.to_string(),
            targets_of(split).into_iter().map(str::to_string).collect(),
        );
    }
    let manifest = BundleManifest {
        protocol: bundle.protocol,
        seed: bundle.seed,
        counts,
        targets,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Reads a bundle directory, preferring the `_masked` split files when present.
pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let manifest: BundleManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut splits = Vec::with_capacity(3);
    for name in SPLIT_NAMES {
        let masked = split_file(dir, name, true);
        let path = if masked.exists() {
            masked
        } else {
            split_file(dir, name, false)
        };
        splits.push(read_instances(&path)?);
    }
    let test = splits.pop().expect("three splits");
    let dev = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let bundle = DatasetBundle {
        train,
        dev,
        test,
        protocol: manifest.protocol,
        seed: manifest.seed,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn toy(n_per_target: &[(&str, usize)]) -> Vec<Instance> {
        let mut out = Vec::new();
        for (target, n) in n_per_target {
            for k in 0..*n {
                out.push(
                    Instance::new(format!("{target}-{k}"), *target, format!("text {k}"))
                        .with_label(Stance::ALL[k % 3]),
                );
            }
        }
        out
    }

    #[test]
    fn wtwt_drops_unrelated_and_maps_support() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "wtwt.tsv",
            "tweet\tmerger\tstance\nfirst\tCVS_AET\tsupport\nsecond\tCVS_AET\tunrelated\nthird\tCI_ESRX\trefute\n",
        );
        let spec = ColumnSpec::new("tweet", "merger", Some("stance"));
        let got = load_dataset(&path, &spec, &LabelScheme::wtwt()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].label, Some(Stance::Favor));
        assert_eq!(got[1].label, Some(Stance::Against));
        assert_eq!(got[1].id, "wtwt-3");
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "empty.tsv", "");
        let spec = ColumnSpec::new("text", "target", Some("label"));
        assert!(load_dataset(&path, &spec, &LabelScheme::semeval()).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(dir.path(), "a.tsv", "text\tlabel\nhi\tFAVOR\n");
        let spec = ColumnSpec::new("text", "target", Some("label"));
        let err = load_dataset(&path, &spec, &LabelScheme::semeval()).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn unmappable_label_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "a.tsv",
            "text\ttarget\tlabel\nhi\tx\tFAVOR\nho\tx\tMAYBE\n",
        );
        let spec = ColumnSpec::new("text", "target", Some("label"));
        match load_dataset(&path, &spec, &LabelScheme::semeval()).unwrap_err() {
            Error::Data { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn scheme_rejects_overlap() {
        assert!(LabelScheme::new([("a", Stance::Favor)], ["A"]).is_err());
    }

    #[test]
    fn zero_shot_split_arithmetic() {
        let data = toy(&[("held", 7), ("a", 60), ("b", 40)]);
        let b = make_zero_shot_split(&data, "held", 0.15, 3).unwrap();
        assert_eq!(b.test.len(), 7);
        assert_eq!(b.dev.len(), 15);
        assert_eq!(b.train.len(), 85);
        assert_eq!(b.len(), data.len());
    }

    #[test]
    fn zero_shot_split_unknown_target_lists_available() {
        let data = toy(&[("a", 3), ("b", 3)]);
        match make_zero_shot_split(&data, "zz", 0.15, 0).unwrap_err() {
            Error::UnknownTarget { available, .. } => assert_eq!(available, vec!["a", "b"]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let data = toy(&[("held", 5), ("a", 50), ("b", 50)]);
        let x = make_zero_shot_split(&data, "held", 0.15, 11).unwrap();
        let y = make_zero_shot_split(&data, "held", 0.15, 11).unwrap();
        let z = make_zero_shot_split(&data, "held", 0.15, 12).unwrap();
        assert_eq!(x, y);
        assert_ne!(x.train, z.train);
    }

    #[test]
    fn cross_target_split_arithmetic() {
        let data = toy(&[("src", 12), ("dst", 10), ("other", 4)]);
        let b = make_cross_target_split(&data, "src", "dst", 0.3, 1).unwrap();
        assert_eq!(b.train.len(), 12);
        assert_eq!(b.dev.len(), 3);
        assert_eq!(b.test.len(), 7);
        assert!(b.test.iter().all(|i| i.target == "dst"));
        assert!(make_cross_target_split(&data, "src", "src", 0.3, 1).is_err());
    }

    #[test]
    fn vast_subsets_filter_test() {
        let dir = tempfile::tempdir().unwrap();
        let header = "post,new_topic,label,seen?\n";
        let train = write_file(dir.path(), "train.csv", &format!("{header}p1,t1,1,1\np2,t2,0,1\n"));
        let dev = write_file(dir.path(), "dev.csv", &format!("{header}p3,t1,2,1\n"));
        let test = write_file(
            dir.path(),
            "test.csv",
            &format!("{header}p4,t9,1,0\np5,t1,0,1\np6,t8,2,0\n"),
        );
        let spec = ColumnSpec::vast();
        let scheme = LabelScheme::vast();
        let all = make_vast_split(&train, &dev, &test, &spec, &scheme, VastSubset::All).unwrap();
        assert_eq!(all.test.len(), 3);
        let zero = make_vast_split(&train, &dev, &test, &spec, &scheme, VastSubset::Zero).unwrap();
        assert_eq!(zero.test.len(), 2);
        assert!(zero.test.iter().all(|i| i.seen == Some(false)));
        let few = make_vast_split(&train, &dev, &test, &spec, &scheme, VastSubset::Few).unwrap();
        assert_eq!(few.test.len(), 1);

        let no_marker = ColumnSpec::new("post", "new_topic", Some("label")).with_delimiter(b',');
        assert!(matches!(
            make_vast_split(&train, &dev, &test, &no_marker, &scheme, VastSubset::All),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn vast_few_subset_may_be_empty() {
        let dir = tempfile::tempdir().unwrap();
        let header = "post,new_topic,label,seen?\n";
        let train = write_file(dir.path(), "train.csv", &format!("{header}p1,t1,1,1\n"));
        let test = write_file(dir.path(), "test.csv", &format!("{header}p4,t9,1,0\n"));
        let b = make_vast_split(
            &train,
            &train,
            &test,
            &ColumnSpec::vast(),
            &LabelScheme::vast(),
            VastSubset::Few,
        )
        .unwrap();
        assert!(b.test.is_empty());
    }

    #[test]
    fn bundle_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = toy(&[("held", 4), ("a", 10)]);
        data[0].masked_text = Some("text [MASK]".into());
        data[1].seen = Some(true);
        let bundle = make_zero_shot_split(&data, "held", 0.2, 5).unwrap();
        write_bundle(dir.path(), &bundle).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), bundle);
    }
}
