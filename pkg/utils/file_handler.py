"""Utilities for scene directories and output paths."""
import os
from pathlib import Path
from typing import List, Optional, Tuple

import config


def list_scene_files(data_dir: str) -> List[Path]:
    """
    Scenario files in a directory, sorted by name.

    Args:
        data_dir: Directory to scan (not recursive)

    Returns:
        List of paths; the run configuration snapshot is not a scene
    """
    folder = Path(data_dir)
    return sorted(
        p for p in folder.glob(config.SCENE_FILE_GLOB)
        if p.is_file() and p.name != config.RUN_CONFIG_FILENAME
    )


def generate_output_filename(original_path: str, format_ext: str, output_folder: Optional[str] = None) -> str:
    """
    Output path next to (or named after) an input file.

    Args:
        original_path: Path of the input file
        format_ext: Output extension without the dot (e.g. 'svg', 'forecast.json')
        output_folder: Output folder. If None, uses the input's folder.

    Returns:
        Complete output file path; an existing file there is overwritten
    """
    original_path_obj = Path(original_path)
    folder = Path(output_folder) if output_folder else original_path_obj.parent
    return str(folder / f"{original_path_obj.stem}.{format_ext}")


def check_write_permissions(folder_path: str) -> Tuple[bool, Optional[str]]:
    """
    Verifies if write permissions exist in a folder.

    Args:
        folder_path: Path of folder to verify

    Returns:
        Tuple (has_permissions, error_message)
    """
    if not os.path.exists(folder_path):
        return False, f"Folder does not exist: {folder_path}"
    if not os.path.isdir(folder_path):
        return False, f"Path is not a directory: {folder_path}"

    test_file = os.path.join(folder_path, '.write_test')
    try:
        with open(test_file, 'w') as f:
            f.write('test')
        os.remove(test_file)
        return True, None
    except PermissionError:
        return False, f"No write permissions in: {folder_path}"
    except OSError as e:
        return False, f"Error verifying permissions: {e}"


def prepare_output_dir(folder_path: str) -> Tuple[bool, Optional[str]]:
    """Creates `folder_path` if needed and verifies it is writable."""
    try:
        Path(folder_path).mkdir(parents=True, exist_ok=True)
    except OSError as e:
        return False, f"Cannot create folder {folder_path}: {e}"
    return check_write_permissions(folder_path)
