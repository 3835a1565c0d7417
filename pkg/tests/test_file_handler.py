import config
from utils.file_handler import generate_output_filename, list_scene_files, prepare_output_dir


def test_output_named_after_the_scene(tmp_path):
    scene = tmp_path / "data" / "scene_00004.json"

    assert generate_output_filename(str(scene), "forecast.json", str(tmp_path / "out")) == \
        str(tmp_path / "out" / "scene_00004.forecast.json")
    assert generate_output_filename(str(scene), "svg") == str(tmp_path / "data" / "scene_00004.svg")


def test_existing_output_is_overwritten_not_renamed(tmp_path):
    (tmp_path / "scene_00000.svg").write_text("old", encoding="utf-8")

    assert generate_output_filename(str(tmp_path / "scene_00000.json"), "svg") == str(tmp_path / "scene_00000.svg")


def test_scene_listing_skips_the_run_config(tmp_path):
    for name in ("scene_00001.json", "scene_00000.json", config.RUN_CONFIG_FILENAME):
        (tmp_path / name).write_text("{}", encoding="utf-8")

    assert [p.name for p in list_scene_files(str(tmp_path))] == ["scene_00000.json", "scene_00001.json"]


def test_prepare_output_dir_creates_nested_folders(tmp_path):
    ok, error = prepare_output_dir(str(tmp_path / "a" / "b"))

    assert ok and error is None
    assert (tmp_path / "a" / "b").is_dir()
