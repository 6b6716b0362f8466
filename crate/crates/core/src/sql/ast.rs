use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::value::number_to_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl Aggregate {
    pub const ALL: [Aggregate; 5] =
        [Aggregate::Count, Aggregate::Sum, Aggregate::Avg, Aggregate::Min, Aggregate::Max];

    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Count => "count",
            Aggregate::Sum => "sum",
            Aggregate::Avg => "avg",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
        }
    }

    pub fn parse(name: &str) -> Option<Aggregate> {
        Aggregate::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    EqualTo,
    NotEqualTo,
    GreaterThan,
    LessThan,
    GreaterThanEqualTo,
    LessThanEqualTo,
    Contains,
    Like,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 8] = [
        ConditionKind::EqualTo,
        ConditionKind::NotEqualTo,
        ConditionKind::GreaterThan,
        ConditionKind::LessThan,
        ConditionKind::GreaterThanEqualTo,
        ConditionKind::LessThanEqualTo,
        ConditionKind::Contains,
        ConditionKind::Like,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionKind::EqualTo => "equal_to",
            ConditionKind::NotEqualTo => "not_equal_to",
            ConditionKind::GreaterThan => "greater_than",
            ConditionKind::LessThan => "less_than",
            ConditionKind::GreaterThanEqualTo => "greater_than_equal_to",
            ConditionKind::LessThanEqualTo => "less_than_equal_to",
            ConditionKind::Contains => "contains",
            ConditionKind::Like => "like",
        }
    }

    pub fn parse(name: &str) -> Option<ConditionKind> {
        ConditionKind::ALL.into_iter().find(|c| c.name() == name)
    }

    /// The condition seen from the other side, for `literal OP column`.
    pub fn flipped(self) -> ConditionKind {
        match self {
            ConditionKind::GreaterThan => ConditionKind::LessThan,
            ConditionKind::LessThan => ConditionKind::GreaterThan,
            ConditionKind::GreaterThanEqualTo => ConditionKind::LessThanEqualTo,
            ConditionKind::LessThanEqualTo => ConditionKind::GreaterThanEqualTo,
            other => other,
        }
    }
}

/// A literal from the WHERE clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    /// Value as it appears in SLOT/SEL arguments: numbers become floats.
    pub fn to_tool_value(&self) -> Value {
        match self {
            Scalar::Int(i) => serde_json::Number::from_f64(*i as f64).map(Value::Number).unwrap(),
            Scalar::Float(f) => {
                serde_json::Number::from_f64(*f).map(Value::Number).unwrap_or(Value::Null)
            }
            Scalar::Text(s) => Value::String(s.clone()),
        }
    }

    /// Value as it appears in REST arguments: integers stay integral.
    pub fn to_rest_value(&self) -> Value {
        match self {
            Scalar::Int(i) => Value::Number((*i).into()),
            Scalar::Float(f) => number_to_json(*f),
            Scalar::Text(s) => Value::String(s.clone()),
        }
    }

    pub fn json_type(&self) -> &'static str {
        match self {
            Scalar::Int(_) => "integer",
            Scalar::Float(_) => "number",
            Scalar::Text(_) => "string",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
    pub prefixed_name: String,
}

impl ColumnRef {
    pub fn new(table: &str, column: &str) -> ColumnRef {
        ColumnRef {
            table: table.to_string(),
            column: column.to_string(),
            prefixed_name: crate::db::prefixed(table, column),
        }
    }
}

/// A table in FROM/JOIN with the alias it was referenced by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRef {
    pub alias: String,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    #[serde(rename = "INNER")]
    Inner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    pub left_alias: String,
    pub left_col: ColumnRef,
    pub right_alias: String,
    pub right_col: ColumnRef,
    pub kind: JoinKind,
}

/// Half-open character slice `[start_index, end_index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "operation_type", rename_all = "snake_case")]
pub enum Transform {
    Substring { start_index: usize, end_index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnRef,
    pub condition: ConditionKind,
    pub value: Scalar,
    pub transform: Option<Transform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

/// Arithmetic over two columns, e.g. `CAST(a AS REAL) / b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derived {
    pub left: ColumnRef,
    pub op: ArithOp,
    pub right: ColumnRef,
    pub cast_left: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Column(ColumnRef),
    /// `*`, only inside `COUNT(*)`.
    Star,
    Derived(Derived),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub operand: Operand,
    pub aggregate: Option<Aggregate>,
    pub alias: Option<String>,
}

impl Projection {
    pub fn column(&self) -> Option<&ColumnRef> {
        match &self.operand {
            Operand::Column(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderKey {
    Column(ColumnRef),
    Aggregate { aggregate: Aggregate, target: Option<ColumnRef> },
    Derived(Derived),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSpec {
    pub key: OrderKey,
    pub ascending: bool,
}

impl OrderSpec {
    pub fn is_derived(&self) -> bool {
        matches!(self.key, OrderKey::Derived(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub key: ColumnRef,
    pub aggregation: Aggregate,
    /// Column the aggregation reads; `None` for `COUNT(*)` or a bare GROUP BY.
    pub target: Option<ColumnRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAst {
    /// FROM table first, then joined tables in order.
    pub tables: Vec<TableRef>,
    pub joins: Vec<JoinSpec>,
    pub select_items: Vec<Projection>,
    pub where_conjuncts: Vec<Predicate>,
    pub group_by: Option<GroupSpec>,
    pub order_by: Option<OrderSpec>,
    pub limit: Option<u64>,
    pub distinct: bool,
}

impl SqlAst {
    /// WHERE literals in source order.
    pub fn extract_literals(&self) -> Vec<Predicate> {
        self.where_conjuncts.clone()
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    /// The ungrouped single aggregate of the query, if any.
    pub fn plain_aggregate(&self) -> Option<&Projection> {
        if self.group_by.is_some() {
            return None;
        }
        self.select_items.iter().find(|p| p.aggregate.is_some())
    }

    pub fn has_derived(&self) -> bool {
        self.select_items.iter().any(|p| matches!(p.operand, Operand::Derived(_)))
            || self.order_by.as_ref().is_some_and(OrderSpec::is_derived)
    }

    pub fn for_each_column_mut(&mut self, mut f: impl FnMut(&mut ColumnRef)) {
        let derived = |d: &mut Derived, f: &mut dyn FnMut(&mut ColumnRef)| {
            f(&mut d.left);
            f(&mut d.right);
        };
        for j in &mut self.joins {
            f(&mut j.left_col);
            f(&mut j.right_col);
        }
        for p in &mut self.select_items {
            match &mut p.operand {
                Operand::Column(c) => f(c),
                Operand::Derived(d) => derived(d, &mut f),
                Operand::Star => {}
            }
        }
        for p in &mut self.where_conjuncts {
            f(&mut p.column);
        }
        if let Some(g) = &mut self.group_by {
            f(&mut g.key);
            if let Some(t) = &mut g.target {
                f(t);
            }
        }
        if let Some(o) = &mut self.order_by {
            match &mut o.key {
                OrderKey::Column(c) => f(c),
                OrderKey::Aggregate { target: Some(c), .. } => f(c),
                OrderKey::Aggregate { target: None, .. } => {}
                OrderKey::Derived(d) => derived(d, &mut f),
            }
        }
    }

    pub fn columns(&self) -> Vec<ColumnRef> {
        let mut out = Vec::new();
        self.clone().for_each_column_mut(|c| out.push(c.clone()));
        out
    }
}
