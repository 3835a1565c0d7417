# Utilities module for file handling

