use std::path::Path;

use serde_json::Value;

use super::RegionPolygon;
use crate::error::{Error, Result};

/// A polygon read from a GeoJSON feature, with its `name`-like property if any.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRegion {
    pub name: Option<String>,
    pub polygon: RegionPolygon,
}

const NAME_KEYS: [&str; 5] = ["name", "NAME", "NAME_1", "shapeName", "ADM1_EN"];

pub fn read_geojson_regions(path: impl AsRef<Path>) -> Result<Vec<NamedRegion>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_geojson_regions(&text)
}

/// All polygons of the file merged into one region.
pub fn read_geojson_region(path: impl AsRef<Path>) -> Result<RegionPolygon> {
    RegionPolygon::union_disjoint(read_geojson_regions(path)?.into_iter().map(|r| r.polygon))
}

/// Parse Polygon / MultiPolygon geometries from a FeatureCollection, a Feature
/// or a bare geometry. Other geometry types are skipped.
pub fn parse_geojson_regions(text: &str) -> Result<Vec<NamedRegion>> {
    let doc: Value = serde_json::from_str(text)?;
    let mut out = Vec::new();
    match type_of(&doc)? {
        "FeatureCollection" => {
            let features = doc
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::schema("FeatureCollection without a features array"))?;
            for f in features {
                push_feature(f, &mut out)?;
            }
        }
        "Feature" => push_feature(&doc, &mut out)?,
        _ => {
            if let Some(poly) = geometry(&doc)? {
                out.push(NamedRegion { name: None, polygon: poly });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::schema("no Polygon or MultiPolygon geometry found"));
    }
    Ok(out)
}

fn type_of(v: &Value) -> Result<&str> {
    v.get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::schema("GeoJSON object without a type"))
}

fn push_feature(f: &Value, out: &mut Vec<NamedRegion>) -> Result<()> {
    let Some(geom) = f.get("geometry").filter(|g| !g.is_null()) else {
        return Ok(());
    };
    let name = f.get("properties").and_then(|p| {
        NAME_KEYS
            .iter()
            .find_map(|k| p.get(*k).and_then(Value::as_str))
            .map(str::to_string)
    });
    if let Some(polygon) = geometry(geom)? {
        out.push(NamedRegion { name, polygon });
    }
    Ok(())
}

fn geometry(g: &Value) -> Result<Option<RegionPolygon>> {
    let coords = || {
        g.get("coordinates")
            .ok_or_else(|| Error::schema("geometry without coordinates"))
    };
    let rings = match type_of(g)? {
        "Polygon" => polygon_rings(coords()?)?,
        "MultiPolygon" => coords()?
            .as_array()
            .ok_or_else(|| Error::schema("MultiPolygon coordinates must be an array"))?
            .iter()
            .map(polygon_rings)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
        _ => return Ok(None),
    };
    RegionPolygon::new(rings).map(Some)
}

fn polygon_rings(v: &Value) -> Result<Vec<Vec<(f64, f64)>>> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::schema("polygon coordinates must be an array of rings"))?;
    rings
        .iter()
        .map(|ring| {
            let mut pts = ring
                .as_array()
                .ok_or_else(|| Error::schema("ring must be an array of positions"))?
                .iter()
                .map(|p| {
                    let xy = p.as_array().filter(|a| a.len() >= 2);
                    let x = xy.and_then(|a| a[0].as_f64());
                    let y = xy.and_then(|a| a[1].as_f64());
                    x.zip(y).ok_or_else(|| Error::schema("position must be [x, y, ...]"))
                })
                .collect::<Result<Vec<_>>>()?;
            if pts.len() > 1 && pts.first() == pts.last() {
                pts.pop();
            }
            Ok(pts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_collection_with_names_and_holes() {
        let text = r#"{
          "type": "FeatureCollection",
          "features": [
            {"type": "Feature", "properties": {"name": "North"},
             "geometry": {"type": "Polygon", "coordinates": [
                [[0,0],[4,0],[4,4],[0,4],[0,0]],
                [[1,1],[2,1],[2,2],[1,2],[1,1]]]}},
            {"type": "Feature", "properties": {"NAME_1": "South"},
             "geometry": {"type": "MultiPolygon", "coordinates": [
                [[[10,0],[11,0],[11,1],[10,0]]],
                [[[20,0],[21,0],[21,1],[20,0]]]]}},
            {"type": "Feature", "properties": {}, "geometry": {"type": "Point", "coordinates": [0,0]}}
          ]}"#;
        let regions = parse_geojson_regions(text).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].name.as_deref(), Some("North"));
        assert_eq!(regions[0].polygon.rings().len(), 2);
        assert_eq!(regions[0].polygon.rings()[0].len(), 4);
        assert!(!regions[0].polygon.contains(1.5, 1.5));
        assert_eq!(regions[1].name.as_deref(), Some("South"));
        assert_eq!(regions[1].polygon.rings().len(), 2);
    }

    #[test]
    fn bare_geometry() {
        let r = parse_geojson_regions(r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1]]]}"#)
            .unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].name.is_none());
    }

    #[test]
    fn errors() {
        assert!(parse_geojson_regions("{}").is_err());
        assert!(parse_geojson_regions(r#"{"type":"Point","coordinates":[0,0]}"#).is_err());
        assert!(parse_geojson_regions(r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,0]]]}"#).is_err());
    }
}
