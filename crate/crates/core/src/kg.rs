//! Temporal knowledge graph storage.
//!
//! A [`TemporalKg`] is an immutable, time-sorted array of [`Fact`]s (a
//! [`Quadruple`] plus the split it came from). The companion [`Vocabulary`]
//! maps dense integer ids to surface strings. Test facts are turned into
//! forward and reversed [`Query`]s once the store has been augmented with
//! mirrored relations (`r + |R|`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type EntityId = u32;
pub type RelationId = u32;
pub type Tick = u32;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown {kind} id {id}")]
    UnknownId {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        id: u32,
    },
    #[error("{path}: empty split")]
    EmptySplit { path: PathBuf },
    #[error("{path}:{line}: duplicate quadruple {quad} in {split} split")]
    Duplicate {
        path: PathBuf,
        line: usize,
        quad: Quadruple,
        split: Split,
    },
    #[error("{path}: {message}")]
    Vocabulary { path: PathBuf, message: String },
    #[error("store is already augmented with reversed relations")]
    AlreadyAugmented,
    #[error("store has not been augmented with reversed relations")]
    NotAugmented,
    #[error("tick {0} has no calendar date")]
    NoCalendar(Tick),
}

/// Which split a fact was loaded from. Ordering is train < valid < test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A timestamped fact `(subject, relation, object, time)`.
///
/// Field order matters: the derived `Ord` is the canonical store order
/// `(time, subject, relation, object)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: Tick,
}

impl Quadruple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId, time: Tick) -> Self {
        Self {
            subject,
            relation,
            object,
            time,
        }
    }

    fn sort_key(&self) -> (Tick, EntityId, RelationId, EntityId) {
        (self.time, self.subject, self.relation, self.object)
    }

    /// The mirrored fact `(o, r⁻¹, s, t)` in a relation space of
    /// `2 * num_relations` ids. Applying it twice gives back `self`.
    pub fn reversed(&self, num_relations: u32) -> Self {
        let relation = if self.relation < num_relations {
            self.relation + num_relations
        } else {
            self.relation - num_relations
        };
        Self {
            subject: self.object,
            relation,
            object: self.subject,
            time: self.time,
        }
    }

    pub fn is_mirror(&self, num_relations: u32) -> bool {
        self.relation >= num_relations
    }
}

impl PartialOrd for Quadruple {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Quadruple {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl fmt::Display for Quadruple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.subject, self.relation, self.object, self.time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub quad: Quadruple,
    pub split: Split,
}

/// Lowercase, unify underscores and spaces, drop parentheses, collapse
/// whitespace. Used both for vocabulary collision checks and answer lookup.
pub fn normalize_surface(surface: &str) -> String {
    let mut out = String::with_capacity(surface.len());
    let mut pending_space = false;
    for ch in surface.trim().chars() {
        match ch {
            '(' | ')' => {}
            '_' | ' ' | '\t' => pending_space = true,
            c => {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.extend(c.to_lowercase());
            }
        }
    }
    out
}

/// Dense id ↔ name tables for entities and relations.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    reversed_names: BTreeMap<RelationId, String>,
    entity_lookup: HashMap<String, EntityId>,
    augmented: bool,
}

impl Vocabulary {
    pub fn new(entity_names: Vec<String>, relation_names: Vec<String>) -> Result<Self, String> {
        let mut entity_lookup = HashMap::with_capacity(entity_names.len());
        for (id, name) in entity_names.iter().enumerate() {
            let key = normalize_surface(name);
            if let Some(prev) = entity_lookup.insert(key.clone(), id as EntityId) {
                return Err(format!(
                    "entities {prev} and {id} share the normalized surface {key:?}"
                ));
            }
        }
        Ok(Self {
            entity_names,
            relation_names,
            reversed_names: BTreeMap::new(),
            entity_lookup,
            augmented: false,
        })
    }

    /// Install reversed surface strings, keyed by *base* relation id.
    pub fn with_reversed_names(mut self, names: BTreeMap<RelationId, String>) -> Self {
        self.reversed_names = names;
        self
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of base relations `|R|` (mirrors excluded).
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entity_names.get(id as usize).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn reversed_names(&self) -> &BTreeMap<RelationId, String> {
        &self.reversed_names
    }

    /// Resolves base and, once augmented, mirrored relation ids.
    pub fn relation_name(&self, id: RelationId) -> Option<String> {
        let base = self.relation_names.len() as RelationId;
        if id < base {
            return Some(self.relation_names[id as usize].clone());
        }
        if !self.augmented || id >= 2 * base {
            return None;
        }
        let original = id - base;
        Some(match self.reversed_names.get(&original) {
            Some(name) => name.clone(),
            None => format!("[inverse] {}", self.relation_names[original as usize]),
        })
    }

    /// Exact lookup on the normalized surface form.
    pub fn entity_by_surface(&self, surface: &str) -> Option<EntityId> {
        self.entity_lookup.get(&normalize_surface(surface)).copied()
    }

    pub(crate) fn normalized_entities(&self) -> impl Iterator<Item = (&str, EntityId)> {
        self.entity_lookup.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Maps ticks to calendar dates: `origin + tick / granularity` days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub origin: NaiveDate,
    pub granularity: u32,
}

impl Calendar {
    pub fn date_of(&self, tick: Tick) -> NaiveDate {
        self.origin + chrono::Days::new(u64::from(tick / self.granularity.max(1)))
    }
}

/// Paths to the files of one dataset. Overlay and calendar files are optional.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub entities: PathBuf,
    pub relations: PathBuf,
    pub reversed_relations: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
}

impl DatasetPaths {
    /// Conventional layout: `train.txt`, `valid.txt`, `test.txt`,
    /// `entity2id.txt`, `relation2id.txt` and, if present,
    /// `relation_reversed.txt` and `calendar.txt`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let optional = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        Self {
            train: dir.join("train.txt"),
            valid: dir.join("valid.txt"),
            test: dir.join("test.txt"),
            entities: dir.join("entity2id.txt"),
            relations: dir.join("relation2id.txt"),
            reversed_relations: optional("relation_reversed.txt"),
            calendar: optional("calendar.txt"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Immutable, time-sorted fact store.
#[derive(Debug, Clone)]
pub struct TemporalKg {
    facts: Vec<Fact>,
    time_origin: Tick,
    num_relations: u32,
    augmented: bool,
    calendar: Option<Calendar>,
}

impl TemporalKg {
    /// Builds a store from in-memory facts. Sorts them and rejects
    /// duplicates within a split.
    pub fn from_facts(mut facts: Vec<Fact>, num_relations: u32) -> Result<Self, KgError> {
        facts.sort_by(|a, b| a.quad.cmp(&b.quad).then(a.split.cmp(&b.split)));
        if let Some(w) = facts.windows(2).find(|w| w[0] == w[1]) {
            return Err(KgError::Duplicate {
                path: PathBuf::from("<memory>"),
                line: 0,
                quad: w[0].quad,
                split: w[0].split,
            });
        }
        Ok(Self {
            facts,
            time_origin: 0,
            num_relations,
            augmented: false,
            calendar: None,
        })
    }

    /// Tick rendered as the 1st day. Defaults to 0.
    pub fn with_time_origin(mut self, origin: Tick) -> Self {
        self.time_origin = origin;
        self
    }

    pub fn with_calendar(mut self, calendar: Calendar) -> Self {
        self.calendar = Some(calendar);
        self
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn fact(&self, index: usize) -> &Fact {
        &self.facts[index]
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn time_origin(&self) -> Tick {
        self.time_origin
    }

    pub fn num_relations(&self) -> u32 {
        self.num_relations
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn calendar(&self) -> Option<&Calendar> {
        self.calendar.as_ref()
    }

    /// All facts with `time < t`, from every split.
    pub fn facts_before(&self, t: Tick) -> &[Fact] {
        let end = self.facts.partition_point(|f| f.quad.time < t);
        &self.facts[..end]
    }

    /// Original (non-mirror) facts of one split, in store order.
    pub fn split_facts(&self, split: Split) -> impl Iterator<Item = &Fact> + '_ {
        let r = self.num_relations;
        self.facts
            .iter()
            .filter(move |f| f.split == split && !f.quad.is_mirror(r))
    }

    pub fn counts(&self) -> SplitCounts {
        let mut counts = SplitCounts::default();
        for fact in self.facts.iter().filter(|f| !f.quad.is_mirror(self.num_relations)) {
            match fact.split {
                Split::Train => counts.train += 1,
                Split::Valid => counts.valid += 1,
                Split::Test => counts.test += 1,
            }
        }
        counts
    }

    pub fn contains(&self, quad: &Quadruple, split: Split) -> bool {
        let key = Fact { quad: *quad, split };
        self.facts
            .binary_search_by(|f| f.quad.cmp(&key.quad).then(f.split.cmp(&key.split)))
            .is_ok()
    }

    /// Writes the canonical text dump of `kg` and `vocab` into `dir`.
    /// Loading the dump and dumping again yields byte-identical files.
    pub fn write_canonical(&self, vocab: &Vocabulary, dir: &Path) -> Result<(), KgError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| KgError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for (split, name) in [
            (Split::Train, "train.txt"),
            (Split::Valid, "valid.txt"),
            (Split::Test, "test.txt"),
        ] {
            let mut out = String::new();
            for fact in self.split_facts(split) {
                let q = fact.quad;
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    q.subject, q.relation, q.object, q.time
                ));
            }
            let path = dir.join(name);
            fs::write(&path, out).map_err(io(&path))?;
        }
        let write_map = |name: &str, names: &[String]| -> Result<(), KgError> {
            let mut out = String::new();
            for (id, n) in names.iter().enumerate() {
                out.push_str(&format!("{n}\t{id}\n"));
            }
            let path = dir.join(name);
            fs::write(&path, out).map_err(io(&path))
        };
        write_map("entity2id.txt", vocab.entity_names())?;
        write_map("relation2id.txt", vocab.relation_names())?;
        if !vocab.reversed_names().is_empty() {
            let path = dir.join("relation_reversed.txt");
            let mut file = fs::File::create(&path).map_err(io(&path))?;
            for (id, name) in vocab.reversed_names() {
                writeln!(file, "{id}\t{name}").map_err(io(&path))?;
            }
        }
        if let Some(cal) = &self.calendar {
            let path = dir.join("calendar.txt");
            fs::write(
                &path,
                format!("origin\t{}\ngranularity\t{}\n", cal.origin, cal.granularity),
            )
            .map_err(io(&path))?;
        }
        Ok(())
    }
}

enum RawTime {
    Tick(Tick),
    Date(NaiveDate),
}

struct RawFact {
    subject: EntityId,
    relation: RelationId,
    object: EntityId,
    time: RawTime,
    line: usize,
}

fn read_text(path: &Path) -> Result<String, KgError> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_quadruple_file(path: &Path) -> Result<Vec<RawFact>, KgError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| KgError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(malformed(format!(
                "expected at least 4 fields, found {}",
                fields.len()
            )));
        }
        let int = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| malformed(format!("{what} field {s:?} is not a non-negative integer")))
        };
        let time = match fields[3].parse::<u32>() {
            Ok(t) => RawTime::Tick(t),
            Err(_) => RawTime::Date(
                NaiveDate::parse_from_str(fields[3], "%Y-%m-%d").map_err(|_| {
                    malformed(format!(
                        "time field {:?} is neither an integer nor a YYYY-MM-DD date",
                        fields[3]
                    ))
                })?,
            ),
        };
        out.push(RawFact {
            subject: int(fields[0], "subject")?,
            relation: int(fields[1], "relation")?,
            object: int(fields[2], "object")?,
            time,
            line: line_no,
        });
    }
    Ok(out)
}

/// Parses `name<TAB>id` lines; ids must be dense from 0.
fn parse_mapping(path: &Path) -> Result<Vec<String>, KgError> {
    let text = read_text(path)?;
    let mut by_id: BTreeMap<u32, String> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| KgError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (name, id) = line
            .rsplit_once('\t')
            .or_else(|| line.trim_end().rsplit_once(' '))
            .ok_or_else(|| malformed("expected \"name<TAB>id\"".into()))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| malformed(format!("id {id:?} is not an integer")))?;
        if by_id.insert(id, name.to_string()).is_some() {
            return Err(malformed(format!("id {id} assigned twice")));
        }
    }
    let names: Vec<String> = by_id.values().cloned().collect();
    if let Some((pos, (&id, _))) = by_id.iter().enumerate().find(|(pos, (id, _))| **id as usize != *pos) {
        return Err(KgError::Vocabulary {
            path: path.to_path_buf(),
            message: format!("ids are not dense: expected {pos}, found {id}"),
        });
    }
    Ok(names)
}

/// Parses `relation_id<TAB>text` overlay lines.
pub fn parse_overlay(path: &Path) -> Result<BTreeMap<u32, String>, KgError> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| KgError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (id, phrase) = line
            .split_once('\t')
            .ok_or_else(|| malformed("expected \"relation_id<TAB>text\"".into()))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| malformed(format!("relation id {id:?} is not an integer")))?;
        out.insert(id, phrase.to_string());
    }
    Ok(out)
}

fn parse_calendar(path: &Path) -> Result<Calendar, KgError> {
    let text = read_text(path)?;
    let mut origin = None;
    let mut granularity = 1;
    for (i, line) in text.lines().enumerate() {
        let malformed = |message: String| KgError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let Some((key, value)) = line.split_once('\t') else {
            continue;
        };
        match key.trim() {
            "origin" => {
                origin = Some(
                    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d")
                        .map_err(|e| malformed(e.to_string()))?,
                )
            }
            "granularity" => {
                granularity = value
                    .trim()
                    .parse()
                    .map_err(|_| malformed(format!("bad granularity {value:?}")))?
            }
            other => return Err(malformed(format!("unknown calendar key {other:?}"))),
        }
    }
    let origin = origin.ok_or_else(|| KgError::Vocabulary {
        path: path.to_path_buf(),
        message: "calendar file lacks an origin line".into(),
    })?;
    Ok(Calendar {
        origin,
        granularity,
    })
}

/// Loads and validates a dataset.
///
/// Time fields may be integer ticks or `YYYY-MM-DD` dates (not mixed). Dates
/// become day offsets from the earliest date in any split, and that date
/// becomes the store's calendar origin.
pub fn load_dataset(paths: &DatasetPaths) -> Result<(TemporalKg, Vocabulary), KgError> {
    let entities = parse_mapping(&paths.entities)?;
    let relations = parse_mapping(&paths.relations)?;
    let mut vocab = Vocabulary::new(entities, relations).map_err(|message| KgError::Vocabulary {
        path: paths.entities.clone(),
        message,
    })?;
    if let Some(p) = &paths.reversed_relations {
        let overlay = parse_overlay(p)?;
        if let Some(bad) = overlay.keys().find(|&&id| id as usize >= vocab.num_relations()) {
            return Err(KgError::Vocabulary {
                path: p.clone(),
                message: format!("reversed name for unknown relation id {bad}"),
            });
        }
        vocab = vocab.with_reversed_names(overlay);
    }

    let splits = [
        (Split::Train, &paths.train),
        (Split::Valid, &paths.valid),
        (Split::Test, &paths.test),
    ];
    let mut raw = Vec::new();
    for (split, path) in splits {
        let facts = parse_quadruple_file(path)?;
        if split == Split::Train && facts.is_empty() {
            return Err(KgError::EmptySplit { path: path.clone() });
        }
        raw.push((split, path, facts));
    }

    let dates: Vec<NaiveDate> = raw
        .iter()
        .flat_map(|(_, _, f)| f.iter())
        .filter_map(|f| match f.time {
            RawTime::Date(d) => Some(d),
            RawTime::Tick(_) => None,
        })
        .collect();
    let total: usize = raw.iter().map(|(_, _, f)| f.len()).sum();
    let date_origin = dates.iter().min().copied();
    if !dates.is_empty() && dates.len() != total {
        let (_, path, _) = &raw[0];
        return Err(KgError::Malformed {
            path: (*path).clone(),
            line: 0,
            message: "time fields mix integer ticks and calendar dates".into(),
        });
    }

    let n_ent = vocab.num_entities() as u32;
    let n_rel = vocab.num_relations() as u32;
    let mut facts = Vec::with_capacity(total);
    for (split, path, split_facts) in &raw {
        let mut seen = HashSet::with_capacity(split_facts.len());
        for rf in split_facts {
            let unknown = |kind: &'static str, id: u32| KgError::UnknownId {
                path: (*path).clone(),
                line: rf.line,
                kind,
                id,
            };
            if rf.subject >= n_ent {
                return Err(unknown("entity", rf.subject));
            }
            if rf.object >= n_ent {
                return Err(unknown("entity", rf.object));
            }
            if rf.relation >= n_rel {
                return Err(unknown("relation", rf.relation));
            }
            let time = match (&rf.time, date_origin) {
                (RawTime::Tick(t), _) => *t,
                (RawTime::Date(d), Some(origin)) => (*d - origin).num_days() as Tick,
                (RawTime::Date(_), None) => unreachable!("dates imply an origin"),
            };
            let quad = Quadruple::new(rf.subject, rf.relation, rf.object, time);
            if !seen.insert(quad) {
                return Err(KgError::Duplicate {
                    path: (*path).clone(),
                    line: rf.line,
                    quad,
                    split: *split,
                });
            }
            facts.push(Fact {
                quad,
                split: *split,
            });
        }
    }

    let mut kg = TemporalKg::from_facts(facts, n_rel)?;
    if let Some(origin) = date_origin {
        kg.calendar = Some(Calendar {
            origin,
            granularity: 1,
        });
    } else if let Some(p) = &paths.calendar {
        kg.calendar = Some(parse_calendar(p)?);
    }
    let counts = kg.counts();
    log::info!(
        "loaded {} train / {} valid / {} test facts, {} entities, {} relations",
        counts.train,
        counts.valid,
        counts.test,
        vocab.num_entities(),
        vocab.num_relations()
    );
    Ok((kg, vocab))
}

/// Adds the mirror `(o, r + |R|, s, t)` of every fact, keeping its split.
pub fn augment_reversed(
    kg: TemporalKg,
    vocab: Vocabulary,
) -> Result<(TemporalKg, Vocabulary), KgError> {
    if kg.augmented || vocab.augmented {
        return Err(KgError::AlreadyAugmented);
    }
    let r = kg.num_relations;
    let mut facts = kg.facts;
    let mirrors: Vec<Fact> = facts
        .iter()
        .map(|f| Fact {
            quad: f.quad.reversed(r),
            split: f.split,
        })
        .collect();
    facts.extend(mirrors);
    let mut out = TemporalKg::from_facts(facts, r)?;
    out.time_origin = kg.time_origin;
    out.calendar = kg.calendar;
    out.augmented = true;
    let mut vocab = vocab;
    vocab.augmented = true;
    Ok((out, vocab))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reversed,
}

/// `(subject, relation, ?, time)` with its known answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    /// Position in the unfiltered query list; graph score tables key on it.
    pub id: usize,
    pub subject: EntityId,
    pub relation: RelationId,
    pub ground_truth: EntityId,
    pub time: Tick,
    pub direction: Direction,
    /// The original test fact this query was derived from.
    pub source: Quadruple,
    /// True when no training fact precedes `time`.
    pub cold_start: bool,
}

/// Two queries per original test fact: forward at `2i`, reversed at `2i + 1`.
pub fn queries_from_test(kg: &TemporalKg) -> Result<Vec<Query>, KgError> {
    if !kg.augmented {
        return Err(KgError::NotAugmented);
    }
    let first_train = kg
        .facts
        .iter()
        .find(|f| f.split == Split::Train)
        .map(|f| f.quad.time);
    let r = kg.num_relations;
    let mut out = Vec::new();
    for (i, fact) in kg.split_facts(Split::Test).enumerate() {
        let q = fact.quad;
        let cold_start = first_train.is_none_or(|t0| t0 >= q.time);
        out.push(Query {
            id: 2 * i,
            subject: q.subject,
            relation: q.relation,
            ground_truth: q.object,
            time: q.time,
            direction: Direction::Forward,
            source: q,
            cold_start,
        });
        out.push(Query {
            id: 2 * i + 1,
            subject: q.object,
            relation: q.relation + r,
            ground_truth: q.subject,
            time: q.time,
            direction: Direction::Reversed,
            source: q,
            cold_start,
        });
    }
    Ok(out)
}
