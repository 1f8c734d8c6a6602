//! Category canonicalization, the per-scene vocabulary, and compatibility
//! groups parsed from a grouping response.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("category '{0}' is not in the scene vocabulary")]
    UnknownCategory(String),
    #[error("category text '{0}' is empty after canonicalization")]
    EmptyCategory(String),
}

/// Lowercase, single-spaced noun phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Category(String);

impl Category {
    /// Canonicalizes `raw`; `None` when nothing remains.
    pub fn canonicalize(raw: &str) -> Option<Self> {
        let lowered = raw.to_lowercase().replace('_', " ");
        let joined = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
        (!joined.is_empty()).then_some(Self(joined))
    }

    pub fn parse(raw: &str) -> Result<Self, VocabError> {
        Self::canonicalize(raw).ok_or_else(|| VocabError::EmptyCategory(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn canonicalize(raw: &str) -> Option<Category> {
    Category::canonicalize(raw)
}

/// Parses one comma-separated category line, keeping at most `k` distinct
/// categories in order of appearance.
pub fn parse_vocab_response(line: &str, k: usize) -> Vec<Category> {
    let mut out: Vec<Category> = Vec::new();
    for c in line.split(',').filter_map(Category::canonicalize) {
        if out.len() == k {
            break;
        }
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Ordered, duplicate-free set of categories (first-appearance order).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SceneVocabulary {
    categories: Vec<Category>,
    index: HashMap<Category, usize>,
}

impl SceneVocabulary {
    pub fn insert(&mut self, c: Category) -> usize {
        if let Some(&i) = self.index.get(&c) {
            return i;
        }
        let i = self.categories.len();
        self.index.insert(c.clone(), i);
        self.categories.push(c);
        i
    }

    pub fn position(&self, c: &Category) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn contains(&self, c: &Category) -> bool {
        self.index.contains_key(c)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

impl FromIterator<Category> for SceneVocabulary {
    fn from_iter<I: IntoIterator<Item = Category>>(iter: I) -> Self {
        let mut v = Self::default();
        for c in iter {
            v.insert(c);
        }
        v
    }
}

pub fn aggregate_vocabulary(per_view: &[Vec<Category>]) -> SceneVocabulary {
    per_view.iter().flatten().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub name: String,
    pub members: Vec<Category>,
}

/// Partition of a scene vocabulary into merge-eligible groups.
///
/// `groups` holds the explicit groups (two or more members) first, followed
/// by one singleton group per remaining vocabulary category, in vocabulary
/// order. A group's id is its position in `groups`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityGroups {
    groups: Vec<Group>,
    explicit: usize,
    map: HashMap<Category, GroupId>,
    /// One entry per input line that was skipped or altered.
    pub diagnostics: Vec<String>,
}

impl CompatibilityGroups {
    fn from_explicit(explicit: Vec<Group>, vocab: &SceneVocabulary, diagnostics: Vec<String>) -> Self {
        let mut map = HashMap::new();
        let n_explicit = explicit.len();
        let mut groups = explicit;
        for (gi, g) in groups.iter().enumerate() {
            for m in &g.members {
                map.insert(m.clone(), GroupId(gi as u32));
            }
        }
        for c in vocab.categories() {
            if !map.contains_key(c) {
                map.insert(c.clone(), GroupId(groups.len() as u32));
                groups.push(Group { name: c.to_string(), members: vec![c.clone()] });
            }
        }
        Self { groups, explicit: n_explicit, map, diagnostics }
    }

    /// Every category in its own group.
    pub fn singletons(vocab: &SceneVocabulary) -> Self {
        Self::from_explicit(Vec::new(), vocab, Vec::new())
    }

    /// A single group containing the whole vocabulary; disables the
    /// semantic gate.
    pub fn universal(vocab: &SceneVocabulary) -> Self {
        if vocab.len() < 2 {
            return Self::singletons(vocab);
        }
        let all = Group { name: "all".into(), members: vocab.categories().to_vec() };
        Self::from_explicit(vec![all], vocab, Vec::new())
    }

    pub fn group_of(&self, c: &Category) -> Result<GroupId, VocabError> {
        self.map.get(c).copied().ok_or_else(|| VocabError::UnknownCategory(c.to_string()))
    }

    pub fn explicit_groups(&self) -> &[Group] {
        &self.groups[..self.explicit]
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> Option<&Group> {
        self.groups.get(id.0 as usize)
    }
}

pub fn group_of(c: &Category, groups: &CompatibilityGroups) -> Result<GroupId, VocabError> {
    groups.group_of(c)
}

fn parse_group_line(line: &str) -> Option<(String, Vec<&str>)> {
    let line = line.trim().trim_start_matches(['-', '*']).trim_start();
    let (name, rest) = line.split_once(':')?;
    let rest = rest.trim();
    let inner = rest.strip_prefix('[')?.strip_suffix(']')?;
    let name = name.trim();
    if name.is_empty() {
        return None;
    }
    Some((name.to_string(), inner.split(',').collect()))
}

/// Parses `name: [a, b, ...]` lines into compatibility groups over `vocab`.
///
/// Members outside the vocabulary are dropped, a category already claimed by
/// an earlier group is dropped from later ones, and groups left with fewer
/// than two members are discarded. Unparseable lines are skipped with a
/// diagnostic; `#` lines and blank lines are ignored.
pub fn parse_group_spec(text: &str, vocab: &SceneVocabulary) -> CompatibilityGroups {
    let mut diagnostics = Vec::new();
    let mut claimed: HashMap<Category, usize> = HashMap::new();
    let mut explicit = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((name, raw_members)) = parse_group_line(trimmed) else {
            diagnostics.push(format!("line {}: unparseable group line '{}'", lineno + 1, trimmed));
            continue;
        };
        let mut members: Vec<Category> = Vec::new();
        for c in raw_members.into_iter().filter_map(Category::canonicalize) {
            if !vocab.contains(&c) {
                diagnostics.push(format!("line {}: '{}' not in vocabulary", lineno + 1, c));
            } else if claimed.contains_key(&c) {
                diagnostics.push(format!("line {}: '{}' already grouped", lineno + 1, c));
            } else if !members.contains(&c) {
                members.push(c);
            }
        }
        if members.len() < 2 {
            diagnostics.push(format!("line {}: group '{}' has fewer than two members", lineno + 1, name));
            continue;
        }
        for m in &members {
            claimed.insert(m.clone(), explicit.len());
        }
        explicit.push(Group { name, members });
    }
    for d in &diagnostics {
        log::debug!("grouping: {d}");
    }
    CompatibilityGroups::from_explicit(explicit, vocab, diagnostics)
}
