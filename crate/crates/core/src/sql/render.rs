//! Renders a [`SqlAst`] back to SQLite SQL with canonical `T1..Tn` aliases.

use std::fmt::Write;

use super::ast::*;

/// SQL with literals inlined.
pub fn to_sql(ast: &SqlAst) -> String {
    render(ast, false)
}

/// SQL with every WHERE literal replaced by `?`, in conjunct order.
pub fn to_template(ast: &SqlAst) -> String {
    render(ast, true)
}

pub fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

pub fn scalar_sql(v: &Scalar) -> String {
    match v {
        Scalar::Int(i) => i.to_string(),
        Scalar::Float(f) => format!("{f:?}"),
        Scalar::Text(s) => quote_literal(s),
    }
}

struct Renderer<'a> {
    ast: &'a SqlAst,
}

impl Renderer<'_> {
    fn alias(&self, table: &str) -> String {
        let i = self.ast.tables.iter().position(|t| t.name == table).unwrap_or(0);
        format!("T{}", i + 1)
    }

    fn col(&self, c: &ColumnRef) -> String {
        format!("{}.{}", self.alias(&c.table), crate::db::quote_ident(&c.column))
    }

    fn derived(&self, d: &Derived) -> String {
        let left = if d.cast_left {
            format!("CAST({} AS REAL)", self.col(&d.left))
        } else {
            self.col(&d.left)
        };
        format!("{} {} {}", left, d.op.symbol(), self.col(&d.right))
    }

    fn aggregate(&self, agg: Aggregate, target: Option<&ColumnRef>) -> String {
        let inner = target.map(|c| self.col(c)).unwrap_or_else(|| "*".to_string());
        format!("{}({})", agg.name().to_ascii_uppercase(), inner)
    }

    fn projection(&self, p: &Projection) -> String {
        let body = match (&p.operand, p.aggregate) {
            (Operand::Column(c), None) => self.col(c),
            (Operand::Column(c), Some(a)) => self.aggregate(a, Some(c)),
            (Operand::Star, a) => self.aggregate(a.unwrap_or(Aggregate::Count), None),
            (Operand::Derived(d), _) => self.derived(d),
        };
        match &p.alias {
            Some(a) => format!("{body} AS {}", crate::db::quote_ident(a)),
            None => body,
        }
    }

    fn predicate(&self, p: &Predicate, placeholder: bool) -> String {
        let target = match p.transform {
            Some(Transform::Substring { start_index, end_index }) => format!(
                "SUBSTR({}, {}, {})",
                self.col(&p.column),
                start_index + 1,
                end_index.saturating_sub(start_index)
            ),
            None => self.col(&p.column),
        };
        let value = if placeholder { "?".to_string() } else { scalar_sql(&p.value) };
        match p.condition {
            ConditionKind::Contains => format!("INSTR({target}, {value}) > 0"),
            ConditionKind::Like => format!("{target} LIKE {value}"),
            c => {
                let op = match c {
                    ConditionKind::EqualTo => "=",
                    ConditionKind::NotEqualTo => "<>",
                    ConditionKind::GreaterThan => ">",
                    ConditionKind::LessThan => "<",
                    ConditionKind::GreaterThanEqualTo => ">=",
                    _ => "<=",
                };
                format!("{target} {op} {value}")
            }
        }
    }
}

fn render(ast: &SqlAst, placeholders: bool) -> String {
    let r = Renderer { ast };
    let mut sql = String::from("SELECT ");
    if ast.distinct {
        sql.push_str("DISTINCT ");
    }
    let items: Vec<String> = ast.select_items.iter().map(|p| r.projection(p)).collect();
    sql.push_str(&items.join(", "));
    for (i, t) in ast.tables.iter().enumerate() {
        if i == 0 {
            let _ = write!(sql, " FROM {} AS T1", crate::db::quote_ident(&t.name));
        } else {
            let _ = write!(sql, " INNER JOIN {} AS T{}", crate::db::quote_ident(&t.name), i + 1);
            if let Some(j) = ast.joins.get(i - 1) {
                let _ = write!(sql, " ON {} = {}", r.col(&j.left_col), r.col(&j.right_col));
            }
        }
    }
    if !ast.where_conjuncts.is_empty() {
        let conds: Vec<String> =
            ast.where_conjuncts.iter().map(|p| r.predicate(p, placeholders)).collect();
        let _ = write!(sql, " WHERE {}", conds.join(" AND "));
    }
    if let Some(g) = &ast.group_by {
        let _ = write!(sql, " GROUP BY {}", r.col(&g.key));
    }
    if let Some(o) = &ast.order_by {
        let key = match &o.key {
            OrderKey::Column(c) => r.col(c),
            OrderKey::Aggregate { aggregate, target } => r.aggregate(*aggregate, target.as_ref()),
            OrderKey::Derived(d) => format!("({})", r.derived(d)),
        };
        let _ = write!(sql, " ORDER BY {key} {}", if o.ascending { "ASC" } else { "DESC" });
    }
    if let Some(n) = ast.limit {
        let _ = write!(sql, " LIMIT {n}");
    }
    sql
}
