from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):

    # parallel workers for trajectory ensembles and scans
    THREADS: int = 1

    OUTPUT_DIR: str = "./runs"
    LOG_LEVEL: str = "INFO"

    # reject unknown config keys
    STRICT: bool = True

    VERSION: str = "1.0.0"

    model_config = SettingsConfigDict(env_prefix="TUNNELSCOPE_", env_file=".env", case_sensitive=True, extra="ignore")


settings = Settings()
