//! Per-query GET endpoints: literal lifting, naming, and de-duplication.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use serde_json::{Map, Value};

use crate::db::DbSchema;
use crate::pool::{ParamSpec, RestEndpoint};
use crate::runtime::ToolCall;
use crate::sql::{render, ColumnRef, Operand, OrderKey, SqlAst};

/// snake_case of a column name: parentheticals dropped, camelCase split.
pub fn snake_case(name: &str) -> String {
    let mut stripped = String::new();
    let mut depth = 0usize;
    for ch in name.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            c if depth == 0 => stripped.push(c),
            _ => {}
        }
    }
    let chars: Vec<char> = stripped.chars().collect();
    let mut out = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_alphanumeric() {
            if c.is_ascii_uppercase() && i > 0 {
                let prev = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
                if prev.is_ascii_lowercase() || prev.is_ascii_digit() || (prev.is_ascii_uppercase() && next_lower) {
                    out.push('_');
                }
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push('_');
        }
    }
    out.split('_').filter(|s| !s.is_empty()).collect::<Vec<_>>().join("_")
}

pub fn title_case(snake: &str) -> String {
    snake
        .split('_')
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn column_words(c: &ColumnRef) -> String {
    snake_case(&c.column)
}

/// Resource segment derived from the projection.
pub fn resource_name(ast: &SqlAst) -> String {
    let parts: Vec<String> = ast
        .select_items
        .iter()
        .map(|p| match (&p.operand, p.aggregate) {
            (Operand::Derived(d), _) => format!("{}_ratio", column_words(&d.left)),
            (Operand::Column(c), Some(a)) => format!("{}_{}", a.name(), column_words(c)),
            (Operand::Star, a) => {
                format!("{}_{}", a.map(|a| a.name()).unwrap_or("count"), snake_case(&ast.tables[0].name))
            }
            (Operand::Column(c), None) => column_words(c),
        })
        .collect();
    let mut name = parts.join("_");
    if let Some(o) = &ast.order_by {
        let key = match &o.key {
            OrderKey::Column(c) => column_words(c),
            OrderKey::Aggregate { aggregate, target } => match target {
                Some(t) => format!("{}_{}", aggregate.name(), column_words(t)),
                None => aggregate.name().to_string(),
            },
            OrderKey::Derived(d) => format!("{}_ratio", column_words(&d.left)),
        };
        if ast.limit == Some(1) && key != name {
            let dir = if o.ascending { "lowest" } else { "highest" };
            name = format!("{name}_{dir}_{key}");
        }
    }
    name
}

/// An endpoint before de-duplication, with the gold arguments of its query.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub endpoint: RestEndpoint,
    pub arguments: Map<String, Value>,
}

pub fn endpoint_name(db: &str, resource: &str) -> String {
    format!("get_{resource}_v1_bird_{db}_{resource}_get")
}

pub fn endpoint_path(db: &str, resource: &str) -> String {
    format!("/v1/bird/{db}/{resource}")
}

fn set_resource(e: &mut RestEndpoint, resource: &str) {
    e.resource = resource.to_string();
    e.name = endpoint_name(&e.db, resource);
    e.path = endpoint_path(&e.db, resource);
}

/// Builds the endpoint for one query. `hint` overrides the derived resource name.
pub fn synthesize_endpoint(ast: &SqlAst, schema: &DbSchema, hint: Option<&str>) -> Synthesized {
    let db = schema.name.clone();
    let resource = hint.map(str::to_string).unwrap_or_else(|| resource_name(ast));
    let mut base_counts: HashMap<String, usize> = HashMap::new();
    for p in &ast.where_conjuncts {
        *base_counts.entry(column_words(&p.column)).or_default() += 1;
    }
    let mut arguments_spec = IndexMap::new();
    let mut arguments = Map::new();
    let mut placeholders = Vec::new();
    for p in &ast.where_conjuncts {
        let base = column_words(&p.column);
        let mut name = if base_counts[&base] > 1 { format!("{base}_{}", p.condition.name()) } else { base.clone() };
        let mut n = 2;
        while arguments_spec.contains_key(&name) {
            name = format!("{base}_{}_{n}", p.condition.name());
            n += 1;
        }
        let description = schema
            .tables
            .get(&p.column.table)
            .and_then(|cols| cols.iter().find(|c| c.key_name == p.column.prefixed_name))
            .map(|c| capitalize(&c.description))
            .unwrap_or_else(|| capitalize(&base.replace('_', " ")));
        let mut spec = ParamSpec::new(p.value.json_type(), description);
        spec.title = Some(title_case(&base));
        arguments_spec.insert(name.clone(), spec);
        arguments.insert(name.clone(), p.value.to_rest_value());
        placeholders.push(name);
    }
    let words = resource.replace('_', " ");
    let description = if arguments_spec.is_empty() {
        format!("Get {words}")
    } else {
        let titles: Vec<String> =
            arguments_spec.values().filter_map(|s| s.title.clone()).map(|t| t.to_lowercase()).collect();
        format!("Get {words} for a given {}", titles.join(" and "))
    };
    let mut endpoint = RestEndpoint {
        name: String::new(),
        description,
        path: String::new(),
        db,
        resource: String::new(),
        arguments: arguments_spec,
        sql_template: render::to_template(ast),
        placeholders,
    };
    set_resource(&mut endpoint, &resource);
    Synthesized { endpoint, arguments }
}

/// Merges endpoints with identical `(db, template)`. Returns the surviving
/// endpoints and, for each input, the index of its survivor.
pub fn deduplicate(items: &[RestEndpoint]) -> (Vec<RestEndpoint>, Vec<usize>) {
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, e) in items.iter().enumerate() {
        groups.entry((e.db.clone(), e.sql_template.clone())).or_default().push(i);
    }
    let mut survivors: Vec<RestEndpoint> = Vec::new();
    let mut mapping = vec![0; items.len()];
    for members in groups.values() {
        let best = members.iter().min_by(|&&a, &&b| items[a].name.cmp(&items[b].name)).copied().unwrap();
        for &m in members {
            mapping[m] = survivors.len();
        }
        survivors.push(items[best].clone());
    }
    // Distinct templates that ended up with the same name.
    let mut by_name: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, e) in survivors.iter().enumerate() {
        by_name.entry((e.db.clone(), e.resource.clone())).or_default().push(i);
    }
    let mut taken: std::collections::HashSet<(String, String)> =
        survivors.iter().map(|e| (e.db.clone(), e.resource.clone())).collect();
    for ((db, resource), ids) in by_name {
        if ids.len() < 2 {
            continue;
        }
        for &i in &ids[1..] {
            let params: Vec<&str> = survivors[i].arguments.keys().map(String::as_str).collect();
            let mut candidate =
                if params.is_empty() { resource.clone() } else { format!("{resource}_by_{}", params.join("_")) };
            let mut n = 2;
            while taken.contains(&(db.clone(), candidate.clone())) {
                candidate = format!("{resource}_{n}");
                n += 1;
            }
            taken.insert((db.clone(), candidate.clone()));
            set_resource(&mut survivors[i], &candidate);
        }
    }
    (survivors, mapping)
}

/// The gold call of a REST instance.
pub fn gold_call(endpoint: &RestEndpoint, arguments: &Map<String, Value>) -> ToolCall {
    ToolCall { name: endpoint.name.clone(), arguments: arguments.clone(), label: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_sql;

    #[test]
    fn snake_cases() {
        assert_eq!(snake_case("County Name"), "county_name");
        assert_eq!(snake_case("Charter School (Y/N)"), "charter_school");
        assert_eq!(snake_case("Free Meal Count (K-12)"), "free_meal_count");
        assert_eq!(snake_case("MailStreet"), "mail_street");
        assert_eq!(snake_case("CDSCode"), "cds_code");
        assert_eq!(snake_case("NumTstTakr"), "num_tst_takr");
        assert_eq!(snake_case("player_name"), "player_name");
        assert_eq!(title_case("district_name"), "District Name");
    }

    fn schema() -> DbSchema {
        DbSchema { name: "california_schools".into(), ..Default::default() }
    }

    #[test]
    fn alameda_endpoint() {
        let ast = parse_sql("SELECT `Free Meal Count (K-12)` / `Enrollment (K-12)` FROM frpm WHERE `County Name` = 'Alameda' ORDER BY (CAST(`Free Meal Count (K-12)` AS REAL) / `Enrollment (K-12)`) DESC LIMIT 1").unwrap();
        let s = synthesize_endpoint(&ast, &schema(), None);
        assert_eq!(s.endpoint.resource, "free_meal_count_ratio");
        assert_eq!(s.endpoint.name, "get_free_meal_count_ratio_v1_bird_california_schools_free_meal_count_ratio_get");
        assert_eq!(s.endpoint.path, "/v1/bird/california_schools/free_meal_count_ratio");
        assert_eq!(s.endpoint.arguments["county_name"].ty, "string");
        assert_eq!(s.arguments["county_name"], Value::from("Alameda"));
    }

    #[test]
    fn literal_free_has_no_arguments() {
        let ast = parse_sql("SELECT T2.MailStreet FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode ORDER BY T1.`FRPM Count (K-12)` DESC LIMIT 1").unwrap();
        let s = synthesize_endpoint(&ast, &schema(), Some("mail_street_highest_frpm"));
        assert!(s.endpoint.arguments.is_empty());
        assert!(s.endpoint.placeholders.is_empty());
        assert_eq!(s.endpoint.name, "get_mail_street_highest_frpm_v1_bird_california_schools_mail_street_highest_frpm_get");
        assert_eq!(s.endpoint.description, "Get mail street highest frpm");
    }

    #[test]
    fn zip_codes_titles_and_types() {
        let ast = parse_sql("SELECT T2.Zip FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode WHERE T1.`District Name` = 'Fresno County Office of Education' AND T1.`Charter School (Y/N)` = 1").unwrap();
        let s = synthesize_endpoint(&ast, &schema(), Some("zip_codes"));
        let args: Vec<_> = s.endpoint.arguments.iter().map(|(k, v)| (k.as_str(), v.ty.as_str(), v.title.clone().unwrap())).collect();
        assert_eq!(
            args,
            [("district_name", "string", "District Name".to_string()), ("charter_school", "integer", "Charter School".to_string())]
        );
        assert_eq!(s.endpoint.description, "Get zip codes for a given district name and charter school");
    }

    #[test]
    fn repeated_column_gets_condition_suffix() {
        let ast = parse_sql("SELECT a FROM t WHERE b > 1 AND b < 5").unwrap();
        let s = synthesize_endpoint(&ast, &schema(), None);
        assert_eq!(s.endpoint.placeholders, ["b_greater_than", "b_less_than"]);
    }

    #[test]
    fn dedup_merges_same_template() {
        let a = synthesize_endpoint(&parse_sql("SELECT School FROM schools WHERE County = 'Fresno'").unwrap(), &schema(), Some("zeta"));
        let b = synthesize_endpoint(&parse_sql("SELECT x.School FROM schools AS x WHERE x.County = 'Orange'").unwrap(), &schema(), Some("alpha"));
        let c = synthesize_endpoint(&parse_sql("SELECT School FROM schools WHERE City = 'Fresno'").unwrap(), &schema(), None);
        let (kept, map) = deduplicate(&[a.endpoint, b.endpoint, c.endpoint]);
        assert_eq!(kept.len(), 2);
        assert_eq!(map[0], map[1]);
        assert_ne!(map[0], map[2]);
        assert_eq!(kept[map[0]].resource, "alpha");
    }

    #[test]
    fn dedup_renames_colliding_names() {
        let a = synthesize_endpoint(&parse_sql("SELECT School FROM schools WHERE County = 'Fresno'").unwrap(), &schema(), None);
        let b = synthesize_endpoint(&parse_sql("SELECT School FROM schools WHERE City = 'Fresno'").unwrap(), &schema(), None);
        let (kept, _) = deduplicate(&[a.endpoint, b.endpoint]);
        let mut names: Vec<_> = kept.iter().map(|e| e.resource.clone()).collect();
        names.sort();
        assert_eq!(names, ["school", "school_by_county"]);
    }
}
