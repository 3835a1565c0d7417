# Scene model: types, scenario files, validation and synthetic generation
