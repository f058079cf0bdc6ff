//! Locale catalogs with tag → language → English → key fallback.
//!
//! Catalogs are flat JSON maps, one file per locale (`<tag>.json`). English
//! is the reference catalog and must define every key the system uses.
//! Locales are per session and never enter the replicated document.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;

use crate::model::{NoteColor, Perspective};
use crate::templates::{layout, InnovationStage, TechniqueTag, TemplateKind};

pub const REFERENCE_LOCALE: &str = "en";

/// Error codes the sync protocol can send; each has an `error.<code>` key.
pub const ERROR_CODES: [&str; 7] = [
    "no_such_project",
    "client_id_taken",
    "wrong_project",
    "bad_op",
    "bad_message",
    "not_joined",
    "storage_error",
];

const UI_KEYS: [&str; 8] = [
    "ui.chat.title",
    "ui.chat.send",
    "ui.nav.title",
    "ui.nav.dangling",
    "ui.template_picker.title",
    "ui.template_picker.recommended",
    "ui.locale.label",
    "ui.connection.reconnecting",
];

const BUILTIN: [(&str, &str); 3] = [
    ("en", include_str!("../locales/en.json")),
    ("de", include_str!("../locales/de.json")),
    ("fi", include_str!("../locales/fi.json")),
];

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing catalog {locale}: {source}")]
    Parse {
        locale: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("catalog {locale}: key {key:?} is not dotted lowercase ascii")]
    BadKey { locale: String, key: String },
}

/// Every key referenced by code, sorted.
pub fn used_keys() -> Vec<String> {
    let mut keys: Vec<String> = Vec::new();
    for kind in TemplateKind::ALL {
        keys.push(kind.label_key());
        keys.extend(layout(kind).into_iter().map(|r| r.label_key));
    }
    keys.extend(InnovationStage::ALL.iter().map(|s| s.label_key()));
    keys.extend(TechniqueTag::ALL.iter().map(|t| t.label_key().to_owned()));
    keys.extend(NoteColor::ALL.iter().map(|c| c.label_key().to_owned()));
    keys.extend([Perspective::Overview, Perspective::Detail].iter().map(|p| perspective_key(*p).to_owned()));
    keys.extend(ERROR_CODES.iter().map(|c| format!("error.{c}")));
    keys.extend(UI_KEYS.iter().map(|k| (*k).to_owned()));
    keys.sort();
    keys.dedup();
    keys
}

pub fn perspective_key(p: Perspective) -> &'static str {
    match p {
        Perspective::Overview => "perspective.overview",
        Perspective::Detail => "perspective.detail",
    }
}

/// Dotted lowercase ASCII, e.g. `tpl.swot.strengths`.
pub fn is_valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|part| {
            !part.is_empty() && part.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    locales: BTreeMap<String, BTreeMap<String, String>>,
}

impl Catalog {
    /// The catalogs shipped with the crate.
    pub fn builtin() -> Self {
        let mut catalog = Catalog::default();
        for (tag, json) in BUILTIN {
            catalog
                .insert_json(tag, json)
                .expect("built-in catalogs are valid");
        }
        catalog
    }

    /// Built-in catalogs overlaid with every `<tag>.json` in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, CatalogError> {
        let mut catalog = Catalog::builtin();
        let io = |source| CatalogError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        for path in files {
            let Some(tag) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
                continue;
            };
            let text = std::fs::read_to_string(&path).map_err(|source| CatalogError::Io {
                path: path.display().to_string(),
                source,
            })?;
            catalog.insert_json(&tag, &text)?;
        }
        Ok(catalog)
    }

    pub fn insert_json(&mut self, tag: &str, json: &str) -> Result<(), CatalogError> {
        let map: BTreeMap<String, String> = serde_json::from_str(json).map_err(|source| CatalogError::Parse {
            locale: tag.to_owned(),
            source,
        })?;
        self.insert(tag, map)
    }

    pub fn insert(&mut self, tag: &str, map: BTreeMap<String, String>) -> Result<(), CatalogError> {
        if let Some(key) = map.keys().find(|k| !is_valid_key(k)) {
            return Err(CatalogError::BadKey {
                locale: tag.to_owned(),
                key: key.clone(),
            });
        }
        self.locales.insert(tag.to_owned(), map);
        Ok(())
    }

    pub fn locales(&self) -> impl Iterator<Item = &str> {
        self.locales.keys().map(String::as_str)
    }

    fn lookup(&self, locale: &str, key: &str) -> Option<&str> {
        self.locales.get(locale)?.get(key).map(String::as_str)
    }

    /// Never fails: falls back to the language-only tag, then English, then
    /// the key itself.
    pub fn localize<'a>(&'a self, key: &'a str, locale: &str) -> Cow<'a, str> {
        let language = locale.split(['-', '_']).next().unwrap_or(locale);
        [locale, language, REFERENCE_LOCALE]
            .into_iter()
            .find_map(|tag| self.lookup(tag, key))
            .map_or(Cow::Borrowed(key), Cow::Borrowed)
    }

    /// Every reference key with its localized text for `locale`.
    pub fn resolved(&self, locale: &str) -> BTreeMap<String, String> {
        let Some(reference) = self.locales.get(REFERENCE_LOCALE) else {
            return BTreeMap::new();
        };
        reference
            .keys()
            .map(|k| (k.clone(), self.localize(k, locale).into_owned()))
            .collect()
    }

    /// Keys defined in English but absent from `locale`.
    pub fn missing_keys(&self, locale: &str) -> Vec<String> {
        let Some(reference) = self.locales.get(REFERENCE_LOCALE) else {
            return Vec::new();
        };
        let target = self.locales.get(locale);
        reference
            .keys()
            .filter(|k| target.is_none_or(|t| !t.contains_key(*k)))
            .cloned()
            .collect()
    }
}
