# offset_lab unit tests: terminal test modules and mock data generators.
