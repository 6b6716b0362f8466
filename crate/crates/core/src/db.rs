//! Read-only access to the source databases and the bundled mini corpus.
//!
//! A database root directory holds `{name}.sqlite` files plus optional
//! `{name}.columns.json` sidecars mapping `table -> column -> description`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags, ToSql};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::value::Cell;

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("database `{0}` not found")]
    MissingDatabase(PathBuf),
    #[error("table `{0}` not found")]
    MissingTable(String),
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad column sidecar {path}: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
}

/// One column of the joined working table, as exposed in tool enums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub key_name: String,
    pub description: String,
    pub dtype: String,
}

pub fn prefixed(table: &str, column: &str) -> String {
    format!("{table}_{column}")
}

pub fn database_path(root: &Path, name: &str) -> PathBuf {
    root.join(format!("{name}.sqlite"))
}

pub fn open_read_only(path: &Path) -> Result<Connection, DbError> {
    if !path.is_file() {
        return Err(DbError::MissingDatabase(path.to_path_buf()));
    }
    Ok(Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?)
}

pub fn quote_ident(name: &str) -> String {
    format!("`{}`", name.replace('`', "``"))
}

/// Column names and declared types of a table, in schema order.
pub fn table_columns(conn: &Connection, table: &str) -> Result<Vec<(String, String)>, DbError> {
    let mut stmt = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(table)))?;
    let cols = stmt
        .query_map([], |row| Ok((row.get::<_, String>(1)?, row.get::<_, String>(2)?)))?
        .collect::<Result<Vec<_>, _>>()?;
    if cols.is_empty() {
        return Err(DbError::MissingTable(table.to_string()));
    }
    Ok(cols)
}

pub fn table_names(conn: &Connection) -> Result<Vec<String>, DbError> {
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY rowid")?;
    let names = stmt.query_map([], |row| row.get::<_, String>(0))?.collect::<Result<_, _>>()?;
    Ok(names)
}

/// Runs a query and returns its rows as cells.
pub fn query_rows(
    conn: &Connection,
    sql: &str,
    params: &[&dyn ToSql],
) -> Result<Vec<Vec<Cell>>, rusqlite::Error> {
    let mut stmt = conn.prepare(sql)?;
    let width = stmt.column_count();
    let mut rows = stmt.query(params)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(Cell::from_sql(row.get_ref(i)?));
        }
        out.push(cells);
    }
    Ok(out)
}

pub fn rows_to_json(rows: &[Vec<Cell>]) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| Value::Array(r.iter().map(Cell::to_json).collect()))
            .collect(),
    )
}

/// Schema metadata for one database: per-table columns with descriptions.
#[derive(Debug, Clone, Default)]
pub struct DbSchema {
    pub name: String,
    pub tables: BTreeMap<String, Vec<ColumnInfo>>,
    pub table_order: Vec<String>,
}

impl DbSchema {
    pub fn load(root: &Path, name: &str) -> Result<DbSchema, DbError> {
        let conn = open_read_only(&database_path(root, name))?;
        let sidecar_path = root.join(format!("{name}.columns.json"));
        let descriptions: BTreeMap<String, BTreeMap<String, String>> = if sidecar_path.is_file() {
            let text = std::fs::read_to_string(&sidecar_path)?;
            serde_json::from_str(&text)
                .map_err(|source| DbError::Sidecar { path: sidecar_path.clone(), source })?
        } else {
            BTreeMap::new()
        };
        let mut schema = DbSchema { name: name.to_string(), ..Default::default() };
        for table in table_names(&conn)? {
            let cols = table_columns(&conn, &table)?
                .into_iter()
                .map(|(col, decl)| ColumnInfo {
                    key_name: prefixed(&table, &col),
                    description: descriptions
                        .get(&table)
                        .and_then(|m| m.get(&col))
                        .cloned()
                        .unwrap_or_else(|| col.replace('_', " ")),
                    dtype: dtype_of(&decl).to_string(),
                })
                .collect();
            schema.tables.insert(table.clone(), cols);
            schema.table_order.push(table);
        }
        Ok(schema)
    }

    /// Case-insensitive table lookup returning the canonical name.
    pub fn resolve_table(&self, name: &str) -> Option<&str> {
        self.table_order
            .iter()
            .find(|t| t.as_str() == name)
            .or_else(|| self.table_order.iter().find(|t| t.eq_ignore_ascii_case(name)))
            .map(String::as_str)
    }

    /// Case-insensitive column lookup returning the raw column name.
    pub fn resolve_column(&self, table: &str, column: &str) -> Option<String> {
        let cols = self.tables.get(table)?;
        let raw = |c: &ColumnInfo| c.key_name[table.len() + 1..].to_string();
        cols.iter()
            .map(raw)
            .find(|c| c == column)
            .or_else(|| cols.iter().map(raw).find(|c| c.eq_ignore_ascii_case(column)))
    }

    /// Columns of the joined working table over `tables`, in join order.
    pub fn joined_columns<'a>(
        &self,
        tables: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<ColumnInfo>, DbError> {
        let mut out = Vec::new();
        for t in tables {
            let cols = self.tables.get(t).ok_or_else(|| DbError::MissingTable(t.to_string()))?;
            out.extend(cols.iter().cloned());
        }
        Ok(out)
    }

    pub fn all_columns(&self) -> Vec<ColumnInfo> {
        self.table_order.iter().flat_map(|t| self.tables[t].iter().cloned()).collect()
    }
}

fn dtype_of(declared: &str) -> &'static str {
    let d = declared.to_ascii_uppercase();
    if d.contains("INT") {
        "integer"
    } else if d.contains("REAL") || d.contains("FLOA") || d.contains("DOUB") || d.contains("NUM") {
        "number"
    } else {
        "string"
    }
}

/// The bundled mini databases: `(name, schema + rows script, column sidecar)`.
pub const BUNDLED: &[(&str, &str, &str)] = &[
    (
        "california_schools",
        include_str!("../data/california_schools.sql"),
        include_str!("../data/california_schools.columns.json"),
    ),
    (
        "student_club",
        include_str!("../data/student_club.sql"),
        include_str!("../data/student_club.columns.json"),
    ),
    (
        "european_football_2",
        include_str!("../data/european_football_2.sql"),
        include_str!("../data/european_football_2.columns.json"),
    ),
];

/// The bundled SQL corpus as JSON lines.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.jsonl");

/// Writes the bundled databases into `root`, replacing existing files.
pub fn materialize_bundled(root: &Path) -> Result<Vec<PathBuf>, DbError> {
    std::fs::create_dir_all(root)?;
    let mut written = Vec::new();
    for (name, script, sidecar) in BUNDLED {
        let path = database_path(root, name);
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        let conn = Connection::open(&path)?;
        conn.execute_batch(script)?;
        drop(conn);
        std::fs::write(root.join(format!("{name}.columns.json")), sidecar)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_databases_fit_the_desk_budget() {
        let dir = tempfile::tempdir().unwrap();
        materialize_bundled(dir.path()).unwrap();
        let mut total_rows = 0i64;
        for (name, _, _) in BUNDLED {
            let conn = open_read_only(&database_path(dir.path(), name)).unwrap();
            for t in table_names(&conn).unwrap() {
                let n: i64 = conn
                    .query_row(&format!("SELECT COUNT(*) FROM {}", quote_ident(&t)), [], |r| r.get(0))
                    .unwrap();
                total_rows += n;
            }
        }
        assert!(total_rows <= 500, "{total_rows} rows");
    }

    #[test]
    fn schema_carries_sidecar_descriptions() {
        let dir = tempfile::tempdir().unwrap();
        materialize_bundled(dir.path()).unwrap();
        let schema = DbSchema::load(dir.path(), "student_club").unwrap();
        let member = &schema.tables["member"];
        assert_eq!(member[0].key_name, "member_member_id");
        assert_eq!(member[0].description, "unique id of member");
        assert_eq!(member[6].dtype, "integer");
        assert_eq!(schema.resolve_table("MEMBER"), Some("member"));
    }

    #[test]
    fn read_only_connections_reject_writes() {
        let dir = tempfile::tempdir().unwrap();
        materialize_bundled(dir.path()).unwrap();
        let conn = open_read_only(&database_path(dir.path(), "student_club")).unwrap();
        assert!(conn.execute("DELETE FROM member", []).is_err());
    }

    #[test]
    fn missing_database_is_reported() {
        let err = open_read_only(Path::new("/nonexistent/x.sqlite")).unwrap_err();
        assert!(matches!(err, DbError::MissingDatabase(_)));
    }
}
