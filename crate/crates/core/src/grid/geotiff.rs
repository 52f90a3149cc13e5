//! Single-band integer GeoTIFF I/O on top of the `tiff` container codec.
//!
//! Georeferencing is read from ModelPixelScale + ModelTiepoint or from a
//! non-rotated ModelTransformation. The CRS label round-trips through the
//! GeoKey directory: `EPSG:<code>` labels are stored as EPSG keys, any other
//! label as the GeoTIFF citation string.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, compression::DeflateLevel, Compression, TiffEncoder};
use tiff::tags::Tag;

use super::{CategoricalRaster, GridSpec};
use crate::error::{Error, Result};

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_CITATION: u16 = 1026;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_TYPE: u16 = 3072;
const USER_DEFINED: u16 = 32767;
const ASCII_PARAMS_TAG: u16 = 34737;

/// Read a single-band integer GeoTIFF. `default_nodata` is used when the file
/// carries no GDAL nodata tag.
pub fn read_geotiff(path: impl AsRef<Path>, default_nodata: i32) -> Result<CategoricalRaster> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))?.with_limits(Limits::unlimited());

    let samples: u32 = dec
        .find_tag_unsigned(Tag::SamplesPerPixel)?
        .unwrap_or(1);
    if samples != 1 {
        return Err(Error::UnsupportedBandCount(samples));
    }
    if let Some(fmt) = dec.find_tag_unsigned_vec::<u16>(Tag::SampleFormat)? {
        if fmt.contains(&3) {
            return Err(Error::NonIntegerBand("IEEE float samples".into()));
        }
    }

    let (width, height) = dec.dimensions()?;
    let geokeys = dec.find_tag(Tag::GeoKeyDirectoryTag)?.map(|v| v.into_u16_vec()).transpose()?;
    let ascii = dec
        .find_tag(Tag::GeoAsciiParamsTag)?
        .map(|v| v.into_string())
        .transpose()?;
    let keys = geokeys.as_deref().map(parse_geokeys).unwrap_or_default();
    let pixel_is_point = key_value(&keys, KEY_RASTER_TYPE) == Some(2);

    let (mut origin_x, mut origin_y, pixel_w, pixel_h) = read_transform(&mut dec)?;
    if pixel_is_point {
        origin_x -= pixel_w / 2.0;
        origin_y += pixel_h / 2.0;
    }

    let nodata = match dec.find_tag(Tag::GdalNodata)? {
        Some(v) => parse_nodata(&v.into_string()?).unwrap_or(default_nodata),
        None => default_nodata,
    };

    let values = decode_integers(dec.read_image()?)?;
    let grid = GridSpec::new(
        origin_x,
        origin_y,
        pixel_w,
        pixel_h,
        width as usize,
        height as usize,
        crs_label(&keys, ascii.as_deref()),
    )?;
    CategoricalRaster::new(grid, values, nodata)
}

/// Write a raster as a deflate-compressed single-band GeoTIFF using the
/// narrowest integer sample type that holds every value and the nodata code.
pub fn write_geotiff(raster: &CategoricalRaster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file))?
        .with_compression(Compression::Deflate(DeflateLevel::Balanced));

    let (lo, hi) = raster
        .values()
        .iter()
        .fold((raster.nodata(), raster.nodata()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let g = raster.grid();
    let (w, h) = (g.width as u32, g.height as u32);
    let meta = GeoMeta::new(raster);

    macro_rules! write_as {
        ($ct:ty, $t:ty) => {{
            let data: Vec<$t> = raster.values().iter().map(|&v| v as $t).collect();
            let mut image = enc.new_image::<$ct>(w, h)?;
            meta.write(image.encoder())?;
            image.write_data(&data)?;
        }};
    }

    if lo >= 0 && hi <= u8::MAX as i32 {
        write_as!(colortype::Gray8, u8)
    } else if lo >= 0 && hi <= u16::MAX as i32 {
        write_as!(colortype::Gray16, u16)
    } else if lo >= i16::MIN as i32 && hi <= i16::MAX as i32 {
        write_as!(colortype::GrayI16, i16)
    } else {
        write_as!(colortype::GrayI32, i32)
    }
    Ok(())
}

struct GeoMeta {
    scale: [f64; 3],
    tiepoint: [f64; 6],
    keys: Vec<u16>,
    ascii: Option<String>,
    nodata: String,
}

impl GeoMeta {
    fn new(raster: &CategoricalRaster) -> Self {
        let g = raster.grid();
        let crs = g.crs_id.as_str();
        let epsg = crs
            .strip_prefix("EPSG:")
            .and_then(|c| c.parse::<u16>().ok())
            .filter(|c| format!("EPSG:{c}") == crs && *c != USER_DEFINED);

        // (key, location, count, value), sorted by key id
        let mut entries: Vec<[u16; 4]> = Vec::new();
        let model_type = match epsg {
            Some(c) if (4000..5000).contains(&c) => 2,
            Some(_) => 1,
            None => USER_DEFINED,
        };
        entries.push([KEY_MODEL_TYPE, 0, 1, model_type]);
        entries.push([KEY_RASTER_TYPE, 0, 1, 1]);
        let ascii = (!crs.is_empty()).then(|| format!("{crs}|"));
        if let Some(a) = &ascii {
            entries.push([KEY_CITATION, ASCII_PARAMS_TAG, a.len() as u16, 0]);
        }
        match epsg {
            Some(c) if model_type == 2 => entries.push([KEY_GEOGRAPHIC_TYPE, 0, 1, c]),
            Some(c) => entries.push([KEY_PROJECTED_TYPE, 0, 1, c]),
            None => {}
        }
        let mut keys = vec![1, 1, 0, entries.len() as u16];
        keys.extend(entries.into_iter().flatten());

        GeoMeta {
            scale: [g.pixel_w, g.pixel_h, 0.0],
            tiepoint: [0.0, 0.0, 0.0, g.origin_x, g.origin_y, 0.0],
            keys,
            ascii,
            nodata: raster.nodata().to_string(),
        }
    }

    fn write<W, K>(&self, dir: &mut tiff::encoder::DirectoryEncoder<'_, W, K>) -> Result<()>
    where
        W: std::io::Write + std::io::Seek,
        K: tiff::encoder::TiffKind,
    {
        dir.write_tag(Tag::ModelPixelScaleTag, &self.scale[..])?;
        dir.write_tag(Tag::ModelTiepointTag, &self.tiepoint[..])?;
        dir.write_tag(Tag::GeoKeyDirectoryTag, &self.keys[..])?;
        if let Some(a) = &self.ascii {
            dir.write_tag(Tag::GeoAsciiParamsTag, a.as_str())?;
        }
        dir.write_tag(Tag::GdalNodata, self.nodata.as_str())?;
        Ok(())
    }
}

fn read_transform<R: std::io::Read + std::io::Seek>(
    dec: &mut Decoder<R>,
) -> Result<(f64, f64, f64, f64)> {
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?;
    if let (Some(s), Some(t)) = (&scale, &tie) {
        if s.len() >= 2 && t.len() >= 6 {
            let (pw, ph) = (s[0], s[1]);
            return Ok((t[3] - t[0] * pw, t[4] + t[1] * ph, pw, ph));
        }
    }
    if let Some(m) = dec
        .find_tag(Tag::ModelTransformationTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?
    {
        if m.len() >= 8 {
            if m[1] != 0.0 || m[4] != 0.0 {
                return Err(Error::invalid("rotated geotransforms are not supported"));
            }
            return Ok((m[3], m[7], m[0], -m[5]));
        }
    }
    Err(Error::MissingGeotransform)
}

fn parse_geokeys(dir: &[u16]) -> Vec<[u16; 4]> {
    if dir.len() < 4 {
        return Vec::new();
    }
    let n = dir[3] as usize;
    dir[4..]
        .chunks_exact(4)
        .take(n)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect()
}

fn key_value(keys: &[[u16; 4]], id: u16) -> Option<u16> {
    keys.iter()
        .find(|k| k[0] == id && k[1] == 0)
        .map(|k| k[3])
}

fn crs_label(keys: &[[u16; 4]], ascii: Option<&str>) -> String {
    for id in [KEY_PROJECTED_TYPE, KEY_GEOGRAPHIC_TYPE] {
        if let Some(code) = key_value(keys, id).filter(|&c| c != 0 && c != USER_DEFINED) {
            return format!("EPSG:{code}");
        }
    }
    let citation = keys
        .iter()
        .find(|k| k[0] == KEY_CITATION && k[1] == ASCII_PARAMS_TAG)
        .zip(ascii)
        .and_then(|(k, a)| {
            let (start, len) = (k[3] as usize, k[2] as usize);
            a.get(start..start + len)
        });
    citation
        .map(|s| s.trim_end_matches(['|', '\0']).to_string())
        .unwrap_or_default()
}

fn parse_nodata(s: &str) -> Option<i32> {
    let v: f64 = s.trim_matches(|c: char| c == '\0' || c.is_whitespace()).parse().ok()?;
    (v.fract() == 0.0 && v >= i32::MIN as f64 && v <= i32::MAX as f64).then_some(v as i32)
}

fn decode_integers(data: DecodingResult) -> Result<Vec<i32>> {
    fn wide<T: Copy>(v: Vec<T>) -> Result<Vec<i32>>
    where
        i32: TryFrom<T>,
    {
        v.into_iter()
            .map(|x| i32::try_from(x).map_err(|_| Error::invalid("sample exceeds 32-bit range")))
            .collect()
    }
    match data {
        DecodingResult::U8(v) => Ok(v.into_iter().map(i32::from).collect()),
        DecodingResult::I8(v) => Ok(v.into_iter().map(i32::from).collect()),
        DecodingResult::U16(v) => Ok(v.into_iter().map(i32::from).collect()),
        DecodingResult::I16(v) => Ok(v.into_iter().map(i32::from).collect()),
        DecodingResult::I32(v) => Ok(v),
        DecodingResult::U32(v) => wide(v),
        DecodingResult::U64(v) => wide(v),
        DecodingResult::I64(v) => wide(v),
        DecodingResult::F16(_) | DecodingResult::F32(_) | DecodingResult::F64(_) => {
            Err(Error::NonIntegerBand("floating-point samples".into()))
        }
    }
}
