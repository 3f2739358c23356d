from pydantic import BaseModel, Field

from app.schemas.scene import EmotionCategory


class EmotionRequest(BaseModel):
    text: str = Field(..., min_length=1)


class EmotionResponse(BaseModel):
    label: EmotionCategory
