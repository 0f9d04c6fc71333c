//! Per-task tool registries and their deterministic executors: entity
//! search and booking simulators over a WOZ-style database, a parking
//! booking tool, a keyword-ranked knowledge lookup, and confirmation-only
//! stub tools. Every tool is a pure function of its arguments and the
//! read-only database, so re-execution always yields the identical result.

mod registry;

pub use registry::{registry_for, ToolKind, ToolSpec};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Hotel,
    Restaurant,
    Attraction,
    Train,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Hotel => "hotel",
            Domain::Restaurant => "restaurant",
            Domain::Attraction => "attraction",
            Domain::Train => "train",
        }
    }

    /// The valid slot inventory for filters over this domain.
    pub fn slot_inventory(&self) -> &'static [&'static str] {
        match self {
            Domain::Hotel => &[
                "name", "area", "pricerange", "type", "parking", "internet", "stars", "address",
                "phone", "postcode",
            ],
            Domain::Restaurant => &[
                "name", "area", "pricerange", "food", "address", "phone", "postcode",
            ],
            Domain::Attraction => &[
                "name", "area", "type", "entrancefee", "address", "phone", "postcode",
            ],
            Domain::Train => &[
                "trainid",
                "departure",
                "destination",
                "day",
                "leaveat",
                "arriveby",
                "price",
                "duration",
            ],
        }
    }

    /// The attribute used to order entities in flattened knowledge text.
    fn display_key(&self) -> &'static str {
        match self {
            Domain::Train => "trainid",
            _ => "name",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = ToolboxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hotel" => Ok(Domain::Hotel),
            "restaurant" => Ok(Domain::Restaurant),
            "attraction" => Ok(Domain::Attraction),
            "train" => Ok(Domain::Train),
            other => Err(ToolboxError::UnknownDomain(other.to_string())),
        }
    }
}

/// One database entity; attribute values are stored lowercase-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub domain: Domain,
    pub attributes: BTreeMap<String, String>,
}

/// Result of one tool execution. Search and knowledge tools set
/// `knowledge_text`, the deterministic flattening consumed by the
/// knowledge-usage metrics; stub results carry only a confirmation payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_text: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ToolboxError {
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown slot key `{key}` for domain {domain}")]
    UnknownSlot { domain: String, key: String },
    #[error("missing required arguments for {tool}: {missing:?}")]
    MissingArguments { tool: String, missing: Vec<String> },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool arguments must be a JSON object, got: {0}")]
    BadArguments(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed database file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalizedValue {
    Matched(String),
    Unmatched,
}

// Aliases the agent prompt also teaches; applied after case folding.
const ALIASES: &[(&str, &str)] = &[
    ("city center", "centre"),
    ("city centre", "centre"),
    ("center", "centre"),
    ("centre of town", "centre"),
    ("town centre", "centre"),
    ("kings cross", "london kings cross"),
    ("fitzwilliam", "fitzwilliam museum"),
];

fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Match a raw value to the closest valid option: case-fold and trim, then
/// exact match, then the alias table, then the best candidate by normalized
/// edit distance when the distance ratio is at most 0.25. Ties break by
/// lexicographic order of the candidates.
pub fn normalize_slot_value(raw: &str, valid_options: &[String]) -> NormalizedValue {
    let folded = fold(raw);
    if valid_options.iter().any(|o| *o == folded) {
        return NormalizedValue::Matched(folded);
    }
    for (alias, target) in ALIASES {
        if folded == *alias && valid_options.iter().any(|o| o == target) {
            return NormalizedValue::Matched(target.to_string());
        }
    }
    let mut best: Option<(f64, &String)> = None;
    for option in valid_options {
        let dist = levenshtein(&folded, option);
        let denom = folded.chars().count().max(option.chars().count()).max(1);
        let ratio = dist as f64 / denom as f64;
        if ratio <= 0.25 {
            let better = match &best {
                None => true,
                Some((best_ratio, best_opt)) => {
                    ratio < *best_ratio || (ratio == *best_ratio && option < *best_opt)
                }
            };
            if better {
                best = Some((ratio, option));
            }
        }
    }
    match best {
        Some((_, option)) => NormalizedValue::Matched(option.clone()),
        None => NormalizedValue::Unmatched,
    }
}

/// Read-only WOZ entity database, one JSON file per domain
/// (`hotel.json`, `restaurant.json`, `attraction.json`, `train.json`),
/// each a list of attribute maps. Missing files mean an empty domain.
#[derive(Debug, Clone, Default)]
pub struct WozDatabase {
    entities: BTreeMap<Domain, Vec<EntityRecord>>,
}

impl WozDatabase {
    pub fn load(dir: &Path) -> Result<Self, ToolboxError> {
        let mut db = WozDatabase::default();
        for domain in [
            Domain::Hotel,
            Domain::Restaurant,
            Domain::Attraction,
            Domain::Train,
        ] {
            let path = dir.join(format!("{}.json", domain.as_str()));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|source| ToolboxError::Io {
                path: path.clone(),
                source,
            })?;
            let raw: Vec<BTreeMap<String, Value>> =
                serde_json::from_str(&text).map_err(|e| ToolboxError::Malformed {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
            for attrs in raw {
                db.insert(domain, attrs.into_iter().map(|(k, v)| {
                    let value = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    (k, value)
                }));
            }
        }
        Ok(db)
    }

    pub fn insert<I>(&mut self, domain: Domain, attributes: I)
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let attributes = attributes
            .into_iter()
            .map(|(k, v)| (fold(&k), fold(&v)))
            .collect();
        self.entities
            .entry(domain)
            .or_default()
            .push(EntityRecord { domain, attributes });
    }

    pub fn entities(&self, domain: Domain) -> &[EntityRecord] {
        self.entities.get(&domain).map_or(&[], |v| v.as_slice())
    }

    /// Distinct values present for one slot, sorted. Used as the valid
    /// option set for fuzzy filter normalization.
    pub fn slot_values(&self, domain: Domain, slot: &str) -> Vec<String> {
        let mut values: BTreeSet<String> = BTreeSet::new();
        for e in self.entities(domain) {
            if let Some(v) = e.attributes.get(slot) {
                values.insert(v.clone());
            }
        }
        values.into_iter().collect()
    }

    /// Compact entity listing for the agent system prompt.
    pub fn entity_digest(&self) -> String {
        let mut lines = Vec::new();
        for (domain, slot) in [
            (Domain::Hotel, "name"),
            (Domain::Restaurant, "name"),
            (Domain::Attraction, "name"),
            (Domain::Train, "trainid"),
        ] {
            let values = self.slot_values(domain, slot);
            if !values.is_empty() {
                lines.push(format!("{}s: {}", domain.as_str(), values.join(", ")));
            }
        }
        lines.join("\n")
    }
}

fn flatten_entities(domain: Domain, matched: &[&EntityRecord]) -> String {
    let mut ordered: Vec<&&EntityRecord> = matched.iter().collect();
    ordered.sort_by_key(|e| {
        e.attributes
            .get(domain.display_key())
            .cloned()
            .unwrap_or_default()
    });
    ordered
        .iter()
        .map(|e| {
            e.attributes
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Return every entity matching all filters. Filter values go through
/// `normalize_slot_value` against the values present in the database.
pub fn find_entities(
    domain: Domain,
    filters: &BTreeMap<String, String>,
    db: &WozDatabase,
) -> Result<ToolResult, ToolboxError> {
    let inventory = domain.slot_inventory();
    let mut normalized: BTreeMap<&str, String> = BTreeMap::new();
    for (key, value) in filters {
        let key = fold(key);
        let slot = inventory
            .iter()
            .find(|s| **s == key)
            .ok_or_else(|| ToolboxError::UnknownSlot {
                domain: domain.as_str().to_string(),
                key: key.clone(),
            })?;
        let options = db.slot_values(domain, slot);
        let resolved = match normalize_slot_value(value, &options) {
            NormalizedValue::Matched(v) => v,
            NormalizedValue::Unmatched => fold(value),
        };
        normalized.insert(slot, resolved);
    }
    let matched: Vec<&EntityRecord> = db
        .entities(domain)
        .iter()
        .filter(|e| {
            normalized
                .iter()
                .all(|(slot, want)| e.attributes.get(*slot).is_some_and(|have| have == want))
        })
        .collect();
    let knowledge_text = flatten_entities(domain, &matched);
    let payload = json!({
        "domain": domain.as_str(),
        "count": matched.len(),
        "entities": matched.iter().map(|e| &e.attributes).collect::<Vec<_>>(),
    });
    Ok(ToolResult {
        tool: format!("Find{}", capitalized_plural(domain)),
        payload,
        knowledge_text: Some(knowledge_text),
    })
}

fn capitalized_plural(domain: Domain) -> &'static str {
    match domain {
        Domain::Hotel => "Hotels",
        Domain::Restaurant => "Restaurants",
        Domain::Attraction => "Attractions",
        Domain::Train => "Trains",
    }
}

/// Deterministic 8-character uppercase booking reference from a content
/// hash of the booking request.
fn booking_reference(domain: &str, args: &BTreeMap<String, String>) -> String {
    const CHARSET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    for (k, v) in args {
        hasher.update(b"\x1f");
        hasher.update(k.as_bytes());
        hasher.update(b"\x1e");
        hasher.update(v.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .take(8)
        .map(|b| CHARSET[(*b as usize) % CHARSET.len()] as char)
        .collect()
}

fn required_booking_args(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Hotel => &["name", "day", "stay", "people"],
        Domain::Restaurant => &["name", "day", "time", "people"],
        Domain::Train => &["trainid", "people"],
        Domain::Attraction => &[],
    }
}

fn check_required(
    tool: &str,
    args: &BTreeMap<String, String>,
    required: &[&str],
) -> Result<(), ToolboxError> {
    let mut missing: Vec<String> = required
        .iter()
        .filter(|r| !args.contains_key(**r))
        .map(|r| r.to_string())
        .collect();
    missing.sort();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ToolboxError::MissingArguments {
            tool: tool.to_string(),
            missing,
        })
    }
}

/// Book a named entity. Success yields a hash-derived reference; a missing
/// entity yields a `nobook` payload, not an error.
pub fn book_entity(
    domain: Domain,
    booking_args: &BTreeMap<String, String>,
    db: &WozDatabase,
) -> Result<ToolResult, ToolboxError> {
    let tool = format!("Book{}", capitalize(domain.as_str()));
    let args: BTreeMap<String, String> = booking_args
        .iter()
        .map(|(k, v)| (fold(k), fold(v)))
        .collect();
    check_required(&tool, &args, required_booking_args(domain))?;
    let key = domain.display_key();
    let options = db.slot_values(domain, key);
    let raw_name = &args[key];
    let resolved = match normalize_slot_value(raw_name, &options) {
        NormalizedValue::Matched(name) => Some(name),
        NormalizedValue::Unmatched => None,
    };
    match resolved {
        Some(name) => {
            let mut canonical = args.clone();
            canonical.insert(key.to_string(), name.clone());
            let reference = booking_reference(domain.as_str(), &canonical);
            Ok(ToolResult {
                tool,
                payload: json!({
                    "status": "booked",
                    key: name,
                    "reference": reference,
                }),
                knowledge_text: None,
            })
        }
        None => Ok(ToolResult {
            tool,
            payload: json!({
                "status": "nobook",
                "reason": format!("no {} named `{raw_name}` exists", domain.as_str()),
            }),
            knowledge_text: None,
        }),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Book a taxi. Taxis are generated, not database-backed: the car and
/// contact number derive deterministically from the request hash.
pub fn book_taxi(booking_args: &BTreeMap<String, String>) -> Result<ToolResult, ToolboxError> {
    const CARS: &[&str] = &[
        "black bmw",
        "white tesla",
        "yellow skoda",
        "grey volkswagen",
        "blue audi",
        "red ford",
    ];
    let args: BTreeMap<String, String> = booking_args
        .iter()
        .map(|(k, v)| (fold(k), fold(v)))
        .collect();
    check_required("BookTaxi", &args, &["departure", "destination"])?;
    if !args.contains_key("leaveat") && !args.contains_key("arriveby") {
        return Err(ToolboxError::MissingArguments {
            tool: "BookTaxi".to_string(),
            missing: vec!["leaveat or arriveby".to_string()],
        });
    }
    let reference = booking_reference("taxi", &args);
    let car = CARS[(reference.as_bytes()[0] as usize) % CARS.len()];
    let phone: String = reference
        .bytes()
        .map(|b| char::from(b'0' + b % 10))
        .collect();
    Ok(ToolResult {
        tool: "BookTaxi".to_string(),
        payload: json!({
            "status": "booked",
            "car": car,
            "phone": format!("07{phone}"),
            "reference": reference,
        }),
        knowledge_text: None,
    })
}

/// Book a parking space. On success the payload asks the agent to collect
/// the user's profile information.
pub fn book_parking(args: &BTreeMap<String, String>) -> Result<ToolResult, ToolboxError> {
    let args: BTreeMap<String, String> =
        args.iter().map(|(k, v)| (fold(k), fold(v))).collect();
    check_required("BookParking", &args, &["location"])?;
    let reference = booking_reference("parking", &args);
    Ok(ToolResult {
        tool: "BookParking".to_string(),
        payload: json!({
            "status": "booked",
            "reference": reference,
            "profile_request": true,
            "profile_fields": ["name", "id", "email", "license plate number", "phone"],
        }),
        knowledge_text: None,
    })
}

/// Plain-text document store ranked by keyword overlap.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    docs: Vec<(String, String)>,
}

impl KnowledgeBase {
    pub fn load(dir: &Path) -> Result<Self, ToolboxError> {
        let mut docs = Vec::new();
        if dir.exists() {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|source| ToolboxError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "txt" || e == "md"))
                .collect();
            paths.sort();
            for path in paths {
                let content = fs::read_to_string(&path).map_err(|source| ToolboxError::Io {
                    path: path.clone(),
                    source,
                })?;
                let name = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("doc")
                    .to_string();
                docs.push((name, content));
            }
        }
        Ok(KnowledgeBase { docs })
    }

    pub fn from_docs(docs: Vec<(String, String)>) -> Self {
        KnowledgeBase { docs }
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Rank documents by summed case-folded term frequency of the distinct
/// query tokens; return the top-k concatenated with document separators.
/// Ties break by document path.
pub fn knowledge_lookup(query: &str, kb: &KnowledgeBase, top_k: usize) -> ToolResult {
    let query_tokens: BTreeSet<String> = fold(query).split_whitespace().map(String::from).collect();
    let mut scored: Vec<(usize, &(String, String))> = kb
        .docs
        .iter()
        .map(|doc| {
            let folded = fold(&doc.1);
            let score: usize = folded
                .split_whitespace()
                .filter(|tok| query_tokens.contains(*tok))
                .count();
            (score, doc)
        })
        .filter(|(score, _)| *score > 0)
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1 .0.cmp(&b.1 .0)));
    scored.truncate(top_k);
    let knowledge_text = scored
        .iter()
        .map(|(_, (name, content))| format!("=== {name} ===\n{}", content.trim_end()))
        .collect::<Vec<_>>()
        .join("\n");
    let payload = json!({
        "query": query,
        "documents": scored.iter().map(|(score, (name, _))| {
            json!({"name": name, "score": score})
        }).collect::<Vec<_>>(),
    });
    ToolResult {
        tool: "KnowledgeLookup".to_string(),
        payload,
        knowledge_text: Some(knowledge_text),
    }
}

const STUB_TOOLS: &[&str] = &["ScreenShare", "CustomerInfoLookup", "EscalateOrTransfer"];

/// Confirmation-only tools: acknowledge the call and echo the arguments.
pub fn stub_invoke(tool_name: &str, args: &Value) -> Result<ToolResult, ToolboxError> {
    if !STUB_TOOLS.contains(&tool_name) {
        return Err(ToolboxError::UnknownTool(tool_name.to_string()));
    }
    Ok(ToolResult {
        tool: tool_name.to_string(),
        payload: json!({
            "tool": tool_name,
            "acknowledged": true,
            "echo": args,
        }),
        knowledge_text: None,
    })
}

/// The per-task tool surface handed to the agent loop.
pub struct Toolbox {
    pub task: Task,
    pub registry: Vec<ToolSpec>,
    pub db: WozDatabase,
    pub kb: KnowledgeBase,
    pub knowledge_top_k: usize,
}

impl Toolbox {
    pub fn new(task: Task, db: WozDatabase, kb: KnowledgeBase) -> Self {
        Toolbox {
            task,
            registry: registry_for(task),
            db,
            kb,
            knowledge_top_k: 3,
        }
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.registry.iter().map(|t| t.name.as_str()).collect()
    }

    fn string_args(args: &Value) -> Result<BTreeMap<String, String>, ToolboxError> {
        let obj = args
            .as_object()
            .ok_or_else(|| ToolboxError::BadArguments(args.to_string()))?;
        Ok(obj
            .iter()
            .map(|(k, v)| {
                let value = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), value)
            })
            .collect())
    }

    pub fn execute(&self, name: &str, args: &Value) -> Result<ToolResult, ToolboxError> {
        if !self.registry.iter().any(|t| t.name == name) {
            return Err(ToolboxError::UnknownTool(name.to_string()));
        }
        match name {
            "FindHotels" => find_entities(Domain::Hotel, &Self::string_args(args)?, &self.db),
            "FindRestaurants" => {
                find_entities(Domain::Restaurant, &Self::string_args(args)?, &self.db)
            }
            "FindAttractions" => {
                find_entities(Domain::Attraction, &Self::string_args(args)?, &self.db)
            }
            "FindTrains" => find_entities(Domain::Train, &Self::string_args(args)?, &self.db),
            "BookHotel" => book_entity(Domain::Hotel, &Self::string_args(args)?, &self.db),
            "BookRestaurant" => book_entity(Domain::Restaurant, &Self::string_args(args)?, &self.db),
            "BookTrain" => book_entity(Domain::Train, &Self::string_args(args)?, &self.db),
            "BookTaxi" => book_taxi(&Self::string_args(args)?),
            "BookParking" => book_parking(&Self::string_args(args)?),
            "KnowledgeLookup" => {
                let query = args
                    .get("query")
                    .and_then(Value::as_str)
                    .ok_or_else(|| ToolboxError::MissingArguments {
                        tool: "KnowledgeLookup".to_string(),
                        missing: vec!["query".to_string()],
                    })?;
                Ok(knowledge_lookup(query, &self.kb, self.knowledge_top_k))
            }
            stub => stub_invoke(stub, args),
        }
    }
}
