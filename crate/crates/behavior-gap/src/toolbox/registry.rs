//! Static per-task tool registries and their call schemas.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::Task;
use crate::gateway::ToolSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Search,
    Booking,
    Knowledge,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
    pub kind: ToolKind,
}

impl ToolSpec {
    pub fn to_schema(&self) -> ToolSchema {
        ToolSchema {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: self.parameters.clone(),
        }
    }
}

fn string_props(fields: &[(&str, &str)], required: &[&str]) -> Value {
    let props: serde_json::Map<String, Value> = fields
        .iter()
        .map(|(name, desc)| {
            (
                name.to_string(),
                json!({"type": "string", "description": desc}),
            )
        })
        .collect();
    json!({
        "type": "object",
        "properties": props,
        "required": required,
    })
}

fn search_tool(name: &str, what: &str, fields: &[(&str, &str)]) -> ToolSpec {
    ToolSpec {
        name: name.to_string(),
        description: format!(
            "Search the database for {what} matching the given filters. \
             Omit a filter to leave it unconstrained."
        ),
        parameters: string_props(fields, &[]),
        kind: ToolKind::Search,
    }
}

fn woz_tools() -> Vec<ToolSpec> {
    vec![
        search_tool(
            "FindHotels",
            "hotels",
            &[
                ("name", "hotel name"),
                ("area", "part of town"),
                ("pricerange", "cheap, moderate or expensive"),
                ("type", "hotel or guesthouse"),
                ("parking", "yes or no"),
                ("internet", "yes or no"),
                ("stars", "star rating"),
            ],
        ),
        search_tool(
            "FindRestaurants",
            "restaurants",
            &[
                ("name", "restaurant name"),
                ("area", "part of town"),
                ("pricerange", "cheap, moderate or expensive"),
                ("food", "cuisine type"),
            ],
        ),
        search_tool(
            "FindAttractions",
            "attractions",
            &[
                ("name", "attraction name"),
                ("area", "part of town"),
                ("type", "attraction type"),
            ],
        ),
        search_tool(
            "FindTrains",
            "trains",
            &[
                ("trainid", "train id"),
                ("departure", "departure station"),
                ("destination", "arrival station"),
                ("day", "day of week"),
                ("leaveat", "departure time"),
                ("arriveby", "arrival time"),
            ],
        ),
        ToolSpec {
            name: "BookHotel".to_string(),
            description: "Book a hotel by name for a given day, length of stay and party size."
                .to_string(),
            parameters: string_props(
                &[
                    ("name", "hotel name"),
                    ("day", "check-in day"),
                    ("stay", "number of nights"),
                    ("people", "number of guests"),
                ],
                &["name", "day", "stay", "people"],
            ),
            kind: ToolKind::Booking,
        },
        ToolSpec {
            name: "BookRestaurant".to_string(),
            description: "Book a restaurant table by name for a given day, time and party size."
                .to_string(),
            parameters: string_props(
                &[
                    ("name", "restaurant name"),
                    ("day", "reservation day"),
                    ("time", "reservation time"),
                    ("people", "party size"),
                ],
                &["name", "day", "time", "people"],
            ),
            kind: ToolKind::Booking,
        },
        ToolSpec {
            name: "BookTrain".to_string(),
            description: "Book train tickets for a given train id and number of passengers."
                .to_string(),
            parameters: string_props(
                &[("trainid", "train id"), ("people", "number of tickets")],
                &["trainid", "people"],
            ),
            kind: ToolKind::Booking,
        },
        ToolSpec {
            name: "BookTaxi".to_string(),
            description: "Book a taxi between two places. Provide leaveat or arriveby."
                .to_string(),
            parameters: string_props(
                &[
                    ("departure", "pickup place"),
                    ("destination", "dropoff place"),
                    ("leaveat", "earliest pickup time"),
                    ("arriveby", "latest arrival time"),
                ],
                &["departure", "destination"],
            ),
            kind: ToolKind::Booking,
        },
    ]
}

/// The per-task registries. MultiWOZ exposes 8 tools, SpokenWOZ adds
/// parking for 9, and PCS has 4 support tools.
pub fn registry_for(task: Task) -> Vec<ToolSpec> {
    match task {
        Task::Multiwoz => woz_tools(),
        Task::Spokenwoz => {
            let mut tools = woz_tools();
            tools.push(ToolSpec {
                name: "BookParking".to_string(),
                description: "Book a parking space at a location. After a successful booking, \
                              collect the user's profile information (name, ID, email, license \
                              plate number, and phone)."
                    .to_string(),
                parameters: string_props(
                    &[
                        ("location", "where to park"),
                        ("day", "day of the booking"),
                        ("duration", "how long"),
                    ],
                    &["location"],
                ),
                kind: ToolKind::Booking,
            });
            tools
        }
        Task::Pcs => vec![
            ToolSpec {
                name: "KnowledgeLookup".to_string(),
                description: "Search the internal knowledge base and the internet for \
                              product-related information such as troubleshooting guides."
                    .to_string(),
                parameters: string_props(&[("query", "search query")], &["query"]),
                kind: ToolKind::Knowledge,
            },
            ToolSpec {
                name: "CustomerInfoLookup".to_string(),
                description: "Retrieve customer-specific account information.".to_string(),
                parameters: string_props(&[("field", "what to look up")], &[]),
                kind: ToolKind::Stub,
            },
            ToolSpec {
                name: "EscalateOrTransfer".to_string(),
                description: "Escalate an unresolved issue or transfer the customer to another \
                              team or department."
                    .to_string(),
                parameters: string_props(&[("department", "target department")], &[]),
                kind: ToolKind::Stub,
            },
            ToolSpec {
                name: "ScreenShare".to_string(),
                description: "Start a screen-sharing session with the customer.".to_string(),
                parameters: string_props(&[], &[]),
                kind: ToolKind::Stub,
            },
        ],
        Task::Custom => Vec::new(),
    }
}
