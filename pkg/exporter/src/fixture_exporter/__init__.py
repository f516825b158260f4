"""Bridge from pretrained dual-modality teachers to alignment fixtures."""

from .export import export, read_manifest_csv
from .teachers import ClipTeacher, HashedTeacher, build_teacher
from .writer import write_fixture_file, write_sidecar_manifest

__version__ = "0.1.0"
