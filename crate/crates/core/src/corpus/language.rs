use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The eighteen languages of the default raw-corpus partition.
pub const DEFAULT_LANGUAGES: [&str; 18] = [
    "Python",
    "Java",
    "C++",
    "C",
    "JavaScript",
    "PHP",
    "C#",
    "Go",
    "TypeScript",
    "SQL",
    "Ruby",
    "Rust",
    "Jupyter Notebook",
    "Scala",
    "Kotlin",
    "Shell",
    "Dart",
    "Swift",
];

/// A programming-language label.
///
/// Stores the canonical spelling; equality, hashing and ordering are
/// case-insensitive so `"python"` and `"Python"` are the same tag.
#[derive(Clone)]
pub struct LanguageTag(String);

impl LanguageTag {
    /// Build a tag, snapping to the canonical spelling of a default language
    /// when one matches case-insensitively.
    pub fn new(name: &str) -> Self {
        let name = name.trim();
        match DEFAULT_LANGUAGES
            .iter()
            .find(|d| d.eq_ignore_ascii_case(name))
        {
            Some(canon) => LanguageTag((*canon).to_string()),
            None => LanguageTag(name.to_string()),
        }
    }

    pub fn python() -> Self {
        LanguageTag("Python".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_python(&self) -> bool {
        self.0.eq_ignore_ascii_case("python")
    }

    fn key(&self) -> String {
        self.0.to_ascii_lowercase()
    }

    /// Conventional file extension, used when naming synthetic files.
    pub fn file_extension(&self) -> &'static str {
        match self.key().as_str() {
            "python" => "py",
            "java" => "java",
            "c++" => "cpp",
            "c" => "c",
            "javascript" => "js",
            "php" => "php",
            "c#" => "cs",
            "go" => "go",
            "typescript" => "ts",
            "sql" => "sql",
            "ruby" => "rb",
            "rust" => "rs",
            "jupyter notebook" => "ipynb",
            "scala" => "scala",
            "kotlin" => "kt",
            "shell" => "sh",
            "dart" => "dart",
            "swift" => "swift",
            _ => "txt",
        }
    }
}

impl PartialEq for LanguageTag {
    fn eq(&self, other: &Self) -> bool {
        self.0.eq_ignore_ascii_case(&other.0)
    }
}

impl Eq for LanguageTag {}

impl Hash for LanguageTag {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl Ord for LanguageTag {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for LanguageTag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Serialize for LanguageTag {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for LanguageTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(LanguageTag::new(&s))
    }
}

/// The closed set of languages a corpus declares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageSet {
    tags: Vec<LanguageTag>,
}

impl Default for LanguageSet {
    fn default() -> Self {
        Self::new(DEFAULT_LANGUAGES.iter().copied())
    }
}

impl LanguageSet {
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(names: I) -> Self {
        let mut tags: Vec<LanguageTag> = names.into_iter().map(LanguageTag::new).collect();
        tags.sort();
        tags.dedup();
        Self { tags }
    }

    /// Look up `name` case-insensitively, returning the declared spelling.
    pub fn resolve(&self, name: &str) -> Option<LanguageTag> {
        let probe = LanguageTag::new(name);
        self.tags
            .binary_search(&probe)
            .ok()
            .map(|i| self.tags[i].clone())
    }

    pub fn contains(&self, tag: &LanguageTag) -> bool {
        self.tags.binary_search(tag).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LanguageTag> {
        self.tags.iter()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}
