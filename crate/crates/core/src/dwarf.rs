//! DWARF `.debug_line` decoding for ELF objects.
//!
//! Only the address-to-source projection of the line tables is extracted:
//! each executed row becomes one `(address, file, line)` entry. Rows without
//! a resolvable file, rows with line 0 (compiler-generated code), and
//! end-of-sequence markers carry no source position and are skipped.

use gimli::{AttributeValue, EndianSlice, RunTimeEndian, SectionId};
use object::{Object, ObjectSection};

use crate::corpus::{CorpusError, LineEntry};

fn decode_err(context: &str, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::DecodeError(format!("{context}: {e}"))
}

/// Extract line entries from every compilation unit of an ELF object.
pub(crate) fn elf_line_entries(bytes: &[u8]) -> Result<Vec<LineEntry>, CorpusError> {
    let file = object::File::parse(bytes).map_err(|e| decode_err("unreadable ELF", e))?;
    let endian = if file.is_little_endian() {
        RunTimeEndian::Little
    } else {
        RunTimeEndian::Big
    };
    let load_section = |id: SectionId| -> Result<std::borrow::Cow<'_, [u8]>, object::read::Error> {
        match file.section_by_name(id.name()) {
            Some(section) => section.uncompressed_data(),
            None => Ok(std::borrow::Cow::Borrowed(&[][..])),
        }
    };
    let dwarf_sections =
        gimli::DwarfSections::load(load_section).map_err(|e| decode_err("unreadable DWARF", e))?;
    let dwarf = dwarf_sections.borrow(|section| EndianSlice::new(section, endian));

    let mut entries = Vec::new();
    let mut units = dwarf.units();
    while let Some(header) = units.next().map_err(|e| decode_err("bad unit header", e))? {
        let unit = dwarf
            .unit(header)
            .map_err(|e| decode_err("bad compilation unit", e))?;
        let Some(program) = unit.line_program.clone() else {
            continue;
        };
        let comp_dir = unit
            .comp_dir
            .map(|d| d.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut rows = program.rows();
        while let Some((header, row)) = rows
            .next_row()
            .map_err(|e| decode_err("bad line program row", e))?
        {
            if row.end_sequence() {
                continue;
            }
            let Some(line) = row.line() else {
                continue; // line 0: no source attribution
            };
            let Some(file_entry) = row.file(header) else {
                continue;
            };
            let mut path = String::new();
            if let Some(dir) = file_entry.directory(header) {
                let dir = attr_string(&dwarf, &unit, dir);
                if !dir.is_empty() && !dir.starts_with('/') && !comp_dir.is_empty() {
                    path.push_str(&comp_dir);
                    push_component(&mut path, &dir);
                } else {
                    path.push_str(&dir);
                }
            }
            let name = attr_string(&dwarf, &unit, file_entry.path_name());
            if path.is_empty() {
                path = name;
            } else {
                push_component(&mut path, &name);
            }
            if path.is_empty() {
                continue;
            }
            let line = u32::try_from(line.get()).unwrap_or(u32::MAX);
            entries.push(LineEntry {
                address: row.address(),
                file: path,
                line,
            });
        }
    }
    Ok(entries)
}

fn push_component(path: &mut String, component: &str) {
    if component.starts_with('/') {
        path.clear();
        path.push_str(component);
        return;
    }
    if !path.is_empty() && !path.ends_with('/') {
        path.push('/');
    }
    path.push_str(component);
}

fn attr_string<'a>(
    dwarf: &gimli::Dwarf<EndianSlice<'a, RunTimeEndian>>,
    unit: &gimli::Unit<EndianSlice<'a, RunTimeEndian>>,
    value: AttributeValue<EndianSlice<'a, RunTimeEndian>>,
) -> String {
    dwarf
        .attr_string(unit, value)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
