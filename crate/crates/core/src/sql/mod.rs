//! The supported SELECT dialect: parsing, schema resolution, rendering.

pub mod ast;
mod parse;
pub mod render;

pub use ast::*;
pub use parse::parse_sql;

use crate::db::DbSchema;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SqlError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unsupported construct: {0}")]
    Unsupported(String),
    #[error("unresolved {0}")]
    Unresolved(String),
    #[error("missing table `{0}`")]
    MissingTable(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
}

impl SqlError {
    /// Stable short name used as a discard reason.
    pub fn kind(&self) -> &'static str {
        match self {
            SqlError::Syntax(_) => "SyntaxError",
            SqlError::Unsupported(_) => "UnsupportedConstruct",
            SqlError::Unresolved(_) => "Unresolved",
            SqlError::MissingTable(_) => "MissingTable",
            SqlError::MissingColumn(_) => "MissingColumn",
        }
    }
}

/// Canonicalizes table and column spellings against a database schema.
pub fn resolve(mut ast: SqlAst, schema: &DbSchema) -> Result<SqlAst, SqlError> {
    for t in &mut ast.tables {
        t.name = schema
            .resolve_table(&t.name)
            .ok_or_else(|| SqlError::MissingTable(t.name.clone()))?
            .to_string();
    }
    let tables = ast.tables.clone();
    let mut failure = None;
    ast.for_each_column_mut(|c| {
        let Some(t) = tables.iter().find(|t| t.name.eq_ignore_ascii_case(&c.table)) else {
            failure.get_or_insert(SqlError::MissingTable(c.table.clone()));
            return;
        };
        match schema.resolve_column(&t.name, &c.column) {
            Some(col) => *c = ColumnRef::new(&t.name, &col),
            None => {
                failure.get_or_insert(SqlError::MissingColumn(format!("{}.{}", t.name, c.column)));
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(ast),
    }
}

pub fn parse_and_resolve(text: &str, schema: &DbSchema) -> Result<SqlAst, SqlError> {
    resolve(parse_sql(text)?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGNET: &str = "SELECT T2.School FROM satscores AS T1 INNER JOIN schools AS T2 ON T1.cds = T2.CDSCode WHERE T2.Magnet = 1 AND T1.NumTstTakr > 500";
    const ALAMEDA: &str = "SELECT `Free Meal Count (K-12)` / `Enrollment (K-12)` FROM frpm WHERE `County Name` = 'Alameda' ORDER BY (CAST(`Free Meal Count (K-12)` AS REAL) / `Enrollment (K-12)`) DESC LIMIT 1";
    const KEVIN: &str = "SELECT t2.defensive_work_rate FROM Player AS t1 INNER JOIN Player_Attributes AS t2 ON t1.player_fifa_api_id = t2.player_fifa_api_id WHERE SUBSTR(t2.`date`, 1, 10) = '2013-02-22' AND t1.player_name = 'Kevin Berigaud'";

    fn unsupported(sql: &str) -> String {
        match parse_sql(sql) {
            Err(SqlError::Unsupported(w)) => w,
            other => panic!("expected unsupported for {sql}: {other:?}"),
        }
    }

    #[test]
    fn magnet_query_shape() {
        let ast = parse_sql(MAGNET).unwrap();
        assert_eq!(ast.joins.len(), 1);
        assert_eq!(ast.joins[0].left_alias, "T1");
        assert_eq!(ast.joins[0].right_col.prefixed_name, "schools_CDSCode");
        assert_eq!(ast.select_items[0].column().unwrap().prefixed_name, "schools_School");
        let lits: Vec<_> = ast
            .extract_literals()
            .into_iter()
            .map(|p| (p.column.prefixed_name, p.condition, p.value.to_tool_value()))
            .collect();
        assert_eq!(
            lits,
            vec![
                ("schools_Magnet".to_string(), ConditionKind::EqualTo, serde_json::json!(1.0)),
                (
                    "satscores_NumTstTakr".to_string(),
                    ConditionKind::GreaterThan,
                    serde_json::json!(500.0)
                ),
            ]
        );
    }

    #[test]
    fn minimal_query() {
        let ast = parse_sql("SELECT a FROM t").unwrap();
        assert!(ast.joins.is_empty());
        assert!(ast.where_conjuncts.is_empty());
        assert_eq!(ast.select_items[0].column().unwrap().prefixed_name, "t_a");
        assert_eq!(ast.tables[0].alias, "t");
    }

    #[test]
    fn rejects_outside_dialect() {
        assert_eq!(unsupported("SELECT a FROM t WHERE x = 1 OR y = 2"), "OR");
        assert_eq!(unsupported("SELECT a FROM t WHERE x BETWEEN 1 AND 2"), "BETWEEN");
        assert_eq!(unsupported("SELECT a FROM t WHERE x IN (SELECT b FROM u)"), "nested SELECT");
        assert_eq!(unsupported("SELECT CASE WHEN a = 1 THEN 2 END FROM t"), "CASE");
        assert_eq!(unsupported("SELECT a FROM t UNION SELECT a FROM u"), "UNION");
        assert_eq!(unsupported("SELECT a FROM t LEFT JOIN u ON t.a = u.b"), "LEFT JOIN");
        assert_eq!(unsupported("DELETE FROM t"), "DELETE");
        assert_eq!(unsupported("UPDATE t SET a = 1"), "UPDATE");
        assert_eq!(unsupported("SELECT a FROM t; SELECT b FROM t"), "multiple statements");
        assert_eq!(unsupported("SELECT MAX(a), MIN(a) FROM t"), "multiple aggregates");
        assert_eq!(unsupported("SELECT COUNT(DISTINCT a) FROM t"), "COUNT(DISTINCT)");
        assert!(matches!(parse_sql("SELEC a FROM"), Err(SqlError::Syntax(_))));
        assert!(matches!(parse_sql("  "), Err(SqlError::Syntax(_))));
    }

    #[test]
    fn substring_predicate_carries_transform() {
        let ast = parse_sql(KEVIN).unwrap();
        let lits = ast.extract_literals();
        assert_eq!(lits[0].value, Scalar::Text("2013-02-22".into()));
        assert_eq!(
            lits[0].transform,
            Some(Transform::Substring { start_index: 0, end_index: 10 })
        );
        assert_eq!(lits[0].column.prefixed_name, "Player_Attributes_date");
        assert_eq!(lits[1].transform, None);
    }

    #[test]
    fn derived_ratio_is_flagged() {
        let ast = parse_sql(ALAMEDA).unwrap();
        assert!(ast.has_derived());
        assert!(ast.order_by.as_ref().unwrap().is_derived());
        assert_eq!(ast.limit, Some(1));
        assert_eq!(ast.select_items[0].column(), None);
    }

    #[test]
    fn contains_and_flipped_literals() {
        let ast = parse_sql("SELECT a FROM t WHERE INSTR(b, 'Oak') > 0 AND 5 < c").unwrap();
        assert_eq!(ast.where_conjuncts[0].condition, ConditionKind::Contains);
        assert_eq!(ast.where_conjuncts[1].condition, ConditionKind::GreaterThan);
        assert_eq!(ast.where_conjuncts[1].value, Scalar::Int(5));
    }

    #[test]
    fn group_spec_takes_aggregate_from_order() {
        let ast = parse_sql(
            "SELECT County FROM schools GROUP BY County ORDER BY COUNT(CDSCode) DESC LIMIT 1",
        )
        .unwrap();
        let g = ast.group_by.unwrap();
        assert_eq!(g.aggregation, Aggregate::Count);
        assert_eq!(g.target.unwrap().prefixed_name, "schools_CDSCode");
    }

    #[test]
    fn template_lifts_where_literals_only() {
        let ast = parse_sql(KEVIN).unwrap();
        assert_eq!(
            render::to_template(&ast),
            "SELECT T2.`defensive_work_rate` FROM `Player` AS T1 INNER JOIN `Player_Attributes` AS T2 \
             ON T1.`player_fifa_api_id` = T2.`player_fifa_api_id` \
             WHERE SUBSTR(T2.`date`, 1, 10) = ? AND T1.`player_name` = ?"
        );
        let again = parse_sql(&render::to_sql(&ast)).unwrap();
        assert_eq!(again.where_conjuncts, ast.where_conjuncts);
    }

    #[test]
    fn template_is_alias_insensitive() {
        let a = parse_sql("SELECT x.School FROM schools AS x WHERE x.County = 'Fresno'").unwrap();
        let b = parse_sql("SELECT School FROM schools WHERE County = 'Orange'").unwrap();
        assert_eq!(render::to_template(&a), render::to_template(&b));
    }
}
